"""Sampling-based tabular policy evaluation and Monte-Carlo control.

Every estimator moves a table entry toward a sampled target with
``V <- V + alpha * (target - V)``. With the ``harmonic`` step size
(alpha = 1/(m+1) on the m-th prior visit) this is exactly the running mean.

Truncated episodes bootstrap from the current estimate at the truncation
state; terminated ones bootstrap from 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import estimators
from .dp import greedy_actions
from .errors import UsageError
from .mdp import MdpModel, Rng, TabularPolicy, Trajectory, rollout

HARMONIC = "harmonic"


@dataclass(frozen=True)
class EvalConfig:
    gamma: float = 0.9
    alpha: str | float = HARMONIC
    n: int = 1
    lam: float = 0.5
    episodes: int = 10_000
    delta: float = 0.0
    max_len: int = 100
    check_every: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise UsageError("gamma and lambda must lie in [0, 1]")
        if self.alpha != HARMONIC and not (isinstance(self.alpha, (int, float)) and 0.0 < self.alpha <= 1.0):
            raise UsageError("alpha must be 'harmonic' or a constant in (0, 1]")
        if self.n < 1:
            raise UsageError("n must be >= 1")
        if self.delta < 0:
            raise UsageError("delta must be >= 0")


@dataclass
class TabularValues:
    kind: str  # "V" or "Q"
    values: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, kind: str, n_states: int, n_actions: int = 0) -> "TabularValues":
        shape = (n_states,) if kind == "V" else (n_states, n_actions)
        return cls(kind, np.zeros(shape), np.zeros(shape, dtype=np.int64))

    def copy(self) -> "TabularValues":
        return TabularValues(self.kind, self.values.copy(), self.counts.copy())


def _step_size(alpha, count: int) -> float:
    return 1.0 / (count + 1) if alpha == HARMONIC else float(alpha)


def episode_values(traj: Trajectory, v) -> list[float]:
    """V(s_0..s_{T-1}) plus the bootstrap slot: V(s_T) if truncated, else 0."""
    vals = [float(v[s]) for s in traj.states]
    vals.append(float(v[traj.final_state]) if traj.truncated else 0.0)
    return vals


def mc_targets(traj: Trajectory, v, gamma: float) -> np.ndarray:
    boot = float(v[traj.final_state]) if traj.truncated else 0.0
    return estimators.discounted_returns(traj.rewards, gamma, bootstrap=boot)


def td_targets(traj: Trajectory, v, gamma: float) -> np.ndarray:
    vals = np.asarray(episode_values(traj, v))
    return np.asarray(traj.rewards) + gamma * vals[1:]


def n_step_targets(traj: Trajectory, v, gamma: float, n: int) -> np.ndarray:
    vals = episode_values(traj, v)
    r = traj.rewards
    return np.array([estimators.n_step_return(r, vals, gamma, n, t) for t in range(len(r))])


def lambda_targets(traj: Trajectory, v, gamma: float, lam: float) -> np.ndarray:
    vals = episode_values(traj, v)
    return estimators.lambda_return(traj.rewards, vals, estimators.GaeConfig(gamma, lam), terminal=False)


def _run(
    model: MdpModel,
    policy: TabularPolicy,
    cfg: EvalConfig,
    rng: Rng,
    table: TabularValues,
    per_episode: Callable[[Trajectory], None],
    sink: list | None = None,
) -> TabularValues:
    snapshot = table.values.copy()
    for k in range(1, cfg.episodes + 1):
        traj = rollout(model, policy, cfg.max_len, rng)
        if sink is not None:
            sink.append(traj)
        per_episode(traj)
        if cfg.delta > 0 and k % cfg.check_every == 0:
            if np.max(np.abs(table.values - snapshot)) <= cfg.delta:
                break
            snapshot = table.values.copy()
    return table


def _start(table: TabularValues | None, kind: str, model: MdpModel, init=None) -> TabularValues:
    if table is not None:
        if table.kind != kind:
            raise UsageError(f"expected a {kind}-table")
        return table
    t = TabularValues.empty(kind, model.n_states, model.n_actions)
    if init is not None:
        t.values[...] = init
    return t


def mc_evaluate_v(
    model: MdpModel, policy: TabularPolicy, cfg: EvalConfig, rng: Rng, table: TabularValues | None = None
) -> TabularValues:
    """Every-visit Monte-Carlo evaluation with incremental means."""
    tab = _start(table, "V", model)
    vals, counts, alpha, gamma = tab.values, tab.counts, cfg.alpha, cfg.gamma

    def visit(traj: Trajectory) -> None:
        g = float(vals[traj.final_state]) if traj.truncated else 0.0
        for tr in reversed(traj.transitions):
            g = gamma * g + tr.reward
            s = tr.state
            vals[s] += _step_size(alpha, counts[s]) * (g - vals[s])
            counts[s] += 1

    return _run(model, policy, cfg, rng, tab, visit)


def mc_evaluate_q(
    model: MdpModel,
    policy: TabularPolicy,
    cfg: EvalConfig,
    rng: Rng,
    table: TabularValues | None = None,
    sink: list | None = None,
) -> TabularValues:
    tab = _start(table, "Q", model)
    vals, counts, alpha, gamma = tab.values, tab.counts, cfg.alpha, cfg.gamma
    pi = policy.probs

    def visit(traj: Trajectory) -> None:
        g = float(pi[traj.final_state] @ vals[traj.final_state]) if traj.truncated else 0.0
        for tr in reversed(traj.transitions):
            g = gamma * g + tr.reward
            key = (tr.state, tr.action)
            vals[key] += _step_size(alpha, counts[key]) * (g - vals[key])
            counts[key] += 1

    return _run(model, policy, cfg, rng, tab, visit, sink)


def td_evaluate_v(
    model: MdpModel,
    policy: TabularPolicy,
    cfg: EvalConfig,
    rng: Rng,
    table: TabularValues | None = None,
    init=None,
    td_error_log: list | None = None,
) -> TabularValues:
    """Online TD(0): update after every step; terminal successors bootstrap 0."""
    tab = _start(table, "V", model, init)
    vals, counts, alpha, gamma = tab.values, tab.counts, cfg.alpha, cfg.gamma
    terminal = model.terminal

    def visit(traj: Trajectory) -> None:
        for tr in traj.transitions:
            boot = 0.0 if tr.next_state in terminal else vals[tr.next_state]
            s = tr.state
            err = tr.reward + gamma * boot - vals[s]
            if td_error_log is not None:
                td_error_log.append(err)
            vals[s] += _step_size(alpha, counts[s]) * err
            counts[s] += 1

    return _run(model, policy, cfg, rng, tab, visit)


def _offline_evaluate(model, policy, cfg, rng, table, targets_fn) -> TabularValues:
    tab = _start(table, "V", model)
    vals, counts = tab.values, tab.counts

    def visit(traj: Trajectory) -> None:
        targets = targets_fn(traj, vals.copy())
        for s, g in zip(traj.states, targets):
            vals[s] += _step_size(cfg.alpha, counts[s]) * (g - vals[s])
            counts[s] += 1

    return _run(model, policy, cfg, rng, tab, visit)


def n_step_td_evaluate_v(
    model: MdpModel, policy: TabularPolicy, cfg: EvalConfig, rng: Rng, table: TabularValues | None = None
) -> TabularValues:
    """Offline n-step TD: targets use the value table as it stood before the episode."""
    return _offline_evaluate(model, policy, cfg, rng, table, lambda traj, v: n_step_targets(traj, v, cfg.gamma, cfg.n))


def td_lambda_evaluate_v(
    model: MdpModel, policy: TabularPolicy, cfg: EvalConfig, rng: Rng, table: TabularValues | None = None
) -> TabularValues:
    """Forward-view TD(lambda), applied offline at the end of each episode."""
    return _offline_evaluate(model, policy, cfg, rng, table, lambda traj, v: lambda_targets(traj, v, cfg.gamma, cfg.lam))


def epsilon_greedy(q: np.ndarray, epsilon: float) -> TabularPolicy:
    n_s, n_a = q.shape
    probs = np.full((n_s, n_a), epsilon / n_a)
    probs[np.arange(n_s), greedy_actions(q)] += 1.0 - epsilon
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class McControlConfig:
    gamma: float = 0.9
    episodes_per_iter: int = 200
    max_iters: int = 500
    patience: int = 5
    alpha: str | float = HARMONIC
    max_len: int = 100


def mc_control_gpi(
    model: MdpModel,
    cfg: McControlConfig,
    epsilon: float,
    rng: Rng,
    on_iteration: Callable[[int, dict], None] | None = None,
) -> tuple[TabularPolicy, TabularValues]:
    """Monte-Carlo control: truncated MC evaluation of Q alternated with epsilon-greedy improvement.

    Sampling starts from the uniform policy. The loop stops once the greedy
    action set has been unchanged for ``patience`` consecutive improvement
    steps, or after ``max_iters`` evaluation batches.
    """
    if not 0.0 < epsilon <= 1.0:
        raise UsageError("epsilon must lie in (0, 1]")
    behaviour = TabularPolicy.uniform(model.n_states, model.n_actions)
    table = TabularValues.empty("Q", model.n_states, model.n_actions)
    ecfg = EvalConfig(gamma=cfg.gamma, alpha=cfg.alpha, episodes=cfg.episodes_per_iter, max_len=cfg.max_len)
    prev = None
    stable = 0
    for it in range(1, cfg.max_iters + 1):
        batch: list[Trajectory] = []
        mc_evaluate_q(model, behaviour, ecfg, rng, table, sink=batch)
        greedy = greedy_actions(table.values)
        stable = stable + 1 if prev is not None and np.array_equal(greedy, prev) else 0
        prev = greedy
        behaviour = epsilon_greedy(table.values, epsilon)
        if on_iteration is not None:
            on_iteration(it, {"episodes": len(batch), "trajectories": batch, "greedy": greedy})
        if stable >= cfg.patience:
            break
    return TabularPolicy.deterministic(prev, model.n_actions), table
