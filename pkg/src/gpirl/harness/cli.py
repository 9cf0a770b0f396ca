"""Command-line entry point: ``train``, ``solve``, ``eval`` and ``check``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, GpiError, UsageError
from . import checks
from .config import ALGOS, RunConfig, apply_values, emit_config, format_value, parse_config, parse_overrides
from .envs import parse_env_name
from .run import eval_policy, load_policy, run

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gpirl", description="Exact DP, tabular RL and policy-gradient methods on small MDPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one configured experiment")
    t.add_argument("--config", help="INI-style run config file")
    t.add_argument("--algo", choices=ALGOS)
    t.add_argument("--env")
    t.add_argument("--seed", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--out", help="output directory")
    t.add_argument("--checkpoint", action="store_true", default=None, help="also write network checkpoints")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    t.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    s = sub.add_parser("solve", help="exact value iteration / policy iteration")
    s.add_argument("--env", default="frozenlake")
    s.add_argument("--gamma", type=float)
    s.add_argument("--method", choices=("vi", "pi"))
    s.add_argument("--config")
    s.add_argument("--out", default="runs/solve")

    e = sub.add_parser("eval", help="evaluate a saved final_policy.csv")
    e.add_argument("--policy", required=True, help="policy CSV or 'uniform'")
    e.add_argument("--env", default="frozenlake")
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--max-len", type=int, default=100)

    sub.add_parser("check", help="run gradient and identity self-checks")
    return p


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config!r}: {exc}") from None
        cfg = parse_config(text)
    flags = {}
    for name, key in (("algo", "algo"), ("env", "env"), ("seed", "seed"), ("iterations", "iterations"),
                      ("out", "out_dir"), ("checkpoint", "checkpoint")):
        val = getattr(args, name, None)
        if val is not None:
            flags[key] = (format_value(val), None)
    values = parse_overrides(getattr(args, "set", []))
    if flags:
        values.setdefault("run", {}).update(flags)
    return apply_values(cfg, values) if values else cfg


def _cmd_train(args) -> int:
    cfg = resolve_config(args)
    if args.dump_config:
        sys.stdout.write(emit_config(cfg))
        return EXIT_OK
    summary = run(cfg)
    for k, v in summary.items():
        print(f"{k} = {format_value(v)}")
    return EXIT_OK


def _cmd_solve(args) -> int:
    cfg = resolve_config(argparse.Namespace(config=args.config, env=args.env, out=args.out))
    dp_cfg = cfg.dp
    if args.gamma is not None:
        dp_cfg = replace(dp_cfg, gamma=args.gamma)
    if args.method is not None:
        dp_cfg = replace(dp_cfg, method=args.method)
    summary = run(replace(cfg, algo="dp-solve", dp=dp_cfg))
    print(f"success_rate = {format_value(summary['success_rate'])}")
    print(f"wrote {Path(cfg.out_dir) / 'values.csv'} and {Path(cfg.out_dir) / 'q_values.csv'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = parse_env_name(args.env)
    policy = load_policy(args.policy, model)
    res = eval_policy(policy, model, args.episodes, args.seed, args.max_len)
    for k, v in res.items():
        print(f"{k} = {format_value(v)}")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = checks.run_all()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        handler = {"train": _cmd_train, "solve": _cmd_solve, "eval": _cmd_eval, "check": _cmd_check}[args.command]
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GpiError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
