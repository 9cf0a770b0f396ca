"""Run configuration: INI-style ``[section]`` / ``key = value`` text.

Every section maps onto one config dataclass; keys are the dataclass field
names. Precedence is defaults < file < command-line overrides.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from ..dp import GpiConfig
from ..errors import ConfigError, GpiError
from ..policy_opt import ActorCriticConfig, PpoConfig, ReinforceConfig
from ..tabular import HARMONIC, EvalConfig, McControlConfig

ALGOS = ("mc-eval", "td-eval", "td-lambda-eval", "mc-gpi", "dp-solve", "reinforce", "actor-critic", "ppo")


@dataclass(frozen=True)
class DpSettings(GpiConfig):
    method: str = "vi"


@dataclass(frozen=True)
class McSettings(McControlConfig):
    epsilon: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    algo: str = "ppo"
    env: str = "frozenlake"
    seed: int = 0
    iterations: int = 100
    out_dir: str = "runs/default"
    checkpoint: bool = False
    policy: str = "uniform"
    summary_episodes: int = 1000
    ppo: PpoConfig = field(default_factory=PpoConfig)
    actor_critic: ActorCriticConfig = field(default_factory=ActorCriticConfig)
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    dp: DpSettings = field(default_factory=DpSettings)
    mc_control: McSettings = field(default_factory=McSettings)


# float keys whose default None means "off"
OPTIONAL_FLOATS = ("ent_coef_final",)

SECTIONS = ("ppo", "actor_critic", "reinforce", "eval", "dp", "mc_control")
RUN_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig) if f.name not in SECTIONS)


def _parse_value(text: str, default, key: str, line: int | None):
    text = text.strip()
    try:
        if key in OPTIONAL_FLOATS:
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
        if key == "alpha":
            return HARMONIC if text == HARMONIC else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}", line=line, key=key) from None


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of each (section, key) so errors can point at the source."""
    out = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = n
    return out


def _build(cls, base, values: dict[str, tuple[str, int | None]]):
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls) if f.name not in SECTIONS}
    kw = {}
    for key, (text, line) in values.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r}", line=line, key=key)
        kw[key] = _parse_value(text, defaults[key], key, line)
    return kw


def apply_values(cfg: RunConfig, values: dict[str, dict[str, tuple[str, int | None]]]) -> RunConfig:
    """Return ``cfg`` with per-section string values parsed and applied."""
    for sec in values:
        if sec != "run" and sec not in SECTIONS:
            line = next(iter(values[sec].values()), ("", None))[1]
            raise ConfigError(f"unknown section [{sec}]", line=line, key=sec)
    run_kw = _build(RunConfig, cfg, values.get("run", {}))
    subs = {}
    for sec in SECTIONS:
        current = getattr(cfg, sec)
        if sec not in values:
            continue
        kw = _build(type(current), current, values[sec])
        try:
            subs[sec] = dataclasses.replace(current, **kw)
        except GpiError as exc:
            first = next(iter(values[sec]))
            raise ConfigError(f"[{sec}] {exc}", line=values[sec][first][1], key=first) from None
    out = dataclasses.replace(cfg, **run_kw, **subs)
    validate(out)
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", line=exc.lineno, key=exc.option) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header first", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("cannot parse line", line=line) from None
    lines = _key_lines(text)
    values = {
        sec: {key: (val, lines.get((sec, key))) for key, val in parser.items(sec)}
        for sec in parser.sections()
    }
    return apply_values(base or RunConfig(), values)


def parse_overrides(items: list[str]) -> dict[str, dict[str, tuple[str, None]]]:
    """``section.key=value`` strings (``key=value`` means the [run] section)."""
    out: dict[str, dict[str, tuple[str, None]]] = {}
    for item in items:
        lhs, sep, rhs = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value", key=item)
        sec, _, key = lhs.strip().rpartition(".")
        out.setdefault(sec or "run", {})[key] = (rhs, None)
    return out


def validate(cfg: RunConfig) -> None:
    if cfg.algo not in ALGOS:
        raise ConfigError(f"algo must be one of {', '.join(ALGOS)}", key="algo")
    if cfg.iterations < 1:
        raise ConfigError("iterations must be >= 1", key="iterations")
    if cfg.summary_episodes < 1:
        raise ConfigError("summary_episodes must be >= 1", key="summary_episodes")
    if cfg.dp.method not in ("vi", "pi"):
        raise ConfigError("dp.method must be 'vi' or 'pi'", key="method")
    if not 0.0 < cfg.mc_control.epsilon <= 1.0:
        raise ConfigError("mc_control.epsilon must lie in (0, 1]", key="epsilon")
    from .envs import parse_env_name

    try:
        parse_env_name(cfg.env)
    except GpiError as exc:
        raise ConfigError(str(exc), key="env") from None


def emit_config(cfg: RunConfig) -> str:
    lines = ["[run]"]
    lines += [f"{k} = {format_value(getattr(cfg, k))}" for k in RUN_KEYS]
    for sec in SECTIONS:
        sub = getattr(cfg, sec)
        lines += ["", f"[{sec}]"]
        lines += [f"{f.name} = {format_value(getattr(sub, f.name))}" for f in dataclasses.fields(sub)]
    return "\n".join(lines) + "\n"
