"""Execute one configured run and persist its outputs."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import approx, dp, tabular
from ..errors import UsageError
from ..mdp import MdpModel, Rng, TabularPolicy, rollout
from ..policy_opt import actor_critic_train, ppo_train, reinforce_train
from ..policy_opt.pg import METRIC_COLUMNS
from .config import RunConfig, format_value
from .envs import parse_env_name

# stream ids keep evaluation randomness separate from training randomness
EVAL_STREAM = 7


def format_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[dict[str, float]]]:
    """Read back any CSV the harness writes; every cell is numeric."""
    reader = csv.reader(io.StringIO(text))
    try:
        columns = next(reader)
    except StopIteration:
        raise UsageError("empty CSV") from None
    rows = []
    for n, rec in enumerate(reader, start=2):
        if len(rec) != len(columns):
            raise UsageError(f"line {n}: expected {len(columns)} fields, got {len(rec)}")
        try:
            rows.append({c: float(x) for c, x in zip(columns, rec)})
        except ValueError:
            raise UsageError(f"line {n}: non-numeric field") from None
    return columns, rows


def policy_csv(probs: np.ndarray) -> str:
    cols = ["state"] + [f"p{a}" for a in range(probs.shape[1])]
    rows = [{"state": s, **{f"p{a}": float(probs[s, a]) for a in range(probs.shape[1])}} for s in range(len(probs))]
    return format_csv(cols, rows)


def read_policy_csv(text: str) -> TabularPolicy:
    columns, rows = read_csv(text)
    if not columns or columns[0] != "state" or any(c != f"p{a}" for a, c in enumerate(columns[1:])):
        raise UsageError("policy file header must be state,p0,p1,...")
    if [int(r["state"]) for r in rows] != list(range(len(rows))):
        raise UsageError("policy file must list states 0..n-1 in order")
    return TabularPolicy(np.array([[r[c] for c in columns[1:]] for r in rows]))


def load_policy(spec: str, model: MdpModel) -> TabularPolicy:
    if spec == "uniform":
        return TabularPolicy.uniform(model.n_states, model.n_actions)
    try:
        text = Path(spec).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read policy file {spec!r}: {exc}") from None
    pol = read_policy_csv(text)
    if pol.probs.shape != (model.n_states, model.n_actions):
        raise UsageError(f"policy file has shape {pol.probs.shape}, env needs {(model.n_states, model.n_actions)}")
    return pol


def eval_policy(policy: TabularPolicy, model: MdpModel, episodes: int, seed: int, max_len: int = 100) -> dict:
    """Monte-Carlo success rate and mean return, next to the exact absorption probability."""
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    rng = Rng(seed, EVAL_STREAM)
    wins = 0
    total = 0.0
    for _ in range(episodes):
        traj = rollout(model, policy, max_len, rng)
        wins += traj.terminated and traj.final_state in model.goal
        total += traj.total_reward(1.0)
    return {
        "episodes": episodes,
        "success_rate": wins / episodes,
        "mean_return": total / episodes,
        "exact_success_rate": dp.success_probability(model, policy),
    }


@dataclass
class RunOutput:
    policy: np.ndarray
    columns: tuple[str, ...]
    rows: list[dict]
    max_len: int = 100
    files: dict[str, str] = field(default_factory=dict)


def _dp_solve(cfg: RunConfig, model: MdpModel, rng: Rng) -> RunOutput:
    gcfg = dp.GpiConfig(cfg.dp.gamma, cfg.dp.delta, cfg.dp.max_sweeps)
    if cfg.dp.method == "vi":
        resid: list[float] = []
        v, pol = dp.value_iteration(model, gcfg, history=resid)
        rows = [{"iteration": k, "residual": r} for k, r in enumerate(resid, start=1)]
        cols = ("iteration", "residual")
    else:
        hist: list[np.ndarray] = []
        pol, v = dp.policy_iteration(model, gcfg, history=hist)
        rows = [{"iteration": k, "start_value": float(model.initial_dist @ h)} for k, h in enumerate(hist, start=1)]
        cols = ("iteration", "start_value")
    q = dp.q_from_v(model, v, gcfg.gamma)
    files = {"values.csv": dp.values_csv(v), "q_values.csv": dp.q_csv(q)}
    return RunOutput(pol.probs, cols, rows, files=files)


_EVALUATORS = {
    "mc-eval": tabular.mc_evaluate_v,
    "td-eval": tabular.td_evaluate_v,
    "td-lambda-eval": tabular.td_lambda_evaluate_v,
}


def _tabular_eval(cfg: RunConfig, model: MdpModel, rng: Rng) -> RunOutput:
    """Evaluate a fixed policy in chunks of ``check_every`` episodes, tracking error to the exact V."""
    ecfg = cfg.eval
    policy = load_policy(cfg.policy, model)
    oracle = dp.evaluate_policy_exact(model, policy, ecfg.gamma)
    fn = _EVALUATORS[cfg.algo]
    table = tabular.TabularValues.empty("V", model.n_states)
    chunk = replace(ecfg, delta=0.0)
    rows = []
    done = 0
    while done < ecfg.episodes:
        n = min(ecfg.check_every, ecfg.episodes - done)
        before = table.values.copy()
        fn(model, policy, replace(chunk, episodes=n), rng, table)
        done += n
        rows.append({
            "iteration": len(rows) + 1,
            "episodes": done,
            "max_abs_error": float(np.max(np.abs(table.values - oracle))),
            "mean_value": float(np.mean(table.values)),
        })
        if ecfg.delta > 0 and np.max(np.abs(table.values - before)) <= ecfg.delta:
            break
    files = {"values.csv": dp.values_csv(table.values), "oracle_values.csv": dp.values_csv(oracle)}
    return RunOutput(policy.probs, ("iteration", "episodes", "max_abs_error", "mean_value"), rows, ecfg.max_len, files)


def _mc_gpi(cfg: RunConfig, model: MdpModel, rng: Rng) -> RunOutput:
    mcfg = cfg.mc_control
    rows = []

    def log(it, info):
        trajs = info["trajectories"]
        greedy = TabularPolicy.deterministic(info["greedy"], model.n_actions)
        rows.append({
            "iteration": it,
            "episodes": len(trajs),
            "mean_return": float(np.mean([t.total_reward(1.0) for t in trajs])),
            "success_rate": float(np.mean([t.terminated and t.final_state in model.goal for t in trajs])),
            "greedy_success": dp.success_probability(model, greedy),
        })

    base = tabular.McControlConfig(
        mcfg.gamma, mcfg.episodes_per_iter, min(mcfg.max_iters, cfg.iterations), mcfg.patience, mcfg.alpha, mcfg.max_len
    )
    pol, q = tabular.mc_control_gpi(model, base, mcfg.epsilon, rng, on_iteration=log)
    cols = ("iteration", "episodes", "mean_return", "success_rate", "greedy_success")
    return RunOutput(pol.probs, cols, rows, mcfg.max_len, {"q_values.csv": dp.q_csv(q.values)})


def _network_run(cfg: RunConfig, model: MdpModel, rng: Rng) -> RunOutput:
    if cfg.algo == "ppo":
        res, max_len = ppo_train(model, cfg.ppo, cfg.iterations, rng), cfg.ppo.max_len
    elif cfg.algo == "actor-critic":
        res, max_len = actor_critic_train(model, cfg.actor_critic, cfg.iterations, rng), cfg.actor_critic.max_len
    else:
        res, max_len = reinforce_train(model, cfg.reinforce, cfg.iterations, rng), cfg.reinforce.max_len
    files = {}
    if cfg.checkpoint:
        files["actor.ckpt"] = approx.save_checkpoint(res.actor_spec, res.actor)
        if res.critic is not None:
            files["critic.ckpt"] = approx.save_checkpoint(res.critic_spec, res.critic)
    return RunOutput(res.policy_probs(), METRIC_COLUMNS, res.history, max_len, files)


def execute(cfg: RunConfig) -> tuple[RunOutput, dict]:
    """Train/solve without touching the filesystem; returns outputs and the summary."""
    model = parse_env_name(cfg.env)
    t0 = time.perf_counter()
    rng = Rng(cfg.seed)
    if cfg.algo == "dp-solve":
        out = _dp_solve(cfg, model, rng)
    elif cfg.algo in _EVALUATORS:
        out = _tabular_eval(cfg, model, rng)
    elif cfg.algo == "mc-gpi":
        out = _mc_gpi(cfg, model, rng)
    else:
        out = _network_run(cfg, model, rng)
    policy = TabularPolicy(out.policy)
    greedy = TabularPolicy.deterministic(np.argmax(out.policy, axis=1), model.n_actions)
    mc = eval_policy(policy, model, cfg.summary_episodes, cfg.seed, out.max_len)
    summary = {
        "algo": cfg.algo,
        "env": cfg.env,
        "seed": cfg.seed,
        "success_rate": mc["exact_success_rate"],
        "greedy_success_rate": dp.success_probability(model, greedy),
        "sampled_success_rate": mc["success_rate"],
        "mean_return": mc["mean_return"],
        "wall_time": time.perf_counter() - t0,
    }
    return out, summary


def run(cfg: RunConfig) -> dict:
    out, summary = execute(cfg)
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "metrics.csv").write_text(format_csv(out.columns, out.rows))
    (path / "final_policy.csv").write_text(policy_csv(out.policy))
    for name, text in out.files.items():
        (path / name).write_text(text)
    (path / "summary.txt").write_text("".join(f"{k} = {format_value(v)}\n" for k, v in summary.items()))
    return summary
