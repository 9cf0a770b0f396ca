"""Rollout collection under a network policy and flattening into per-step arrays."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import approx, estimators
from ..errors import UsageError
from ..mdp import MdpModel, Rng, Trajectory, _draw, rollout


class StatePolicy:
    """Action sampler over a precomputed per-state probability table.

    All states of a tabular model are featurized up front, so one forward pass
    gives the whole policy; log-probabilities come from log-softmax directly.
    """

    def __init__(self, logits: np.ndarray):
        self.logp = approx.log_softmax(np.asarray(logits, dtype=float))
        self.probs = np.exp(self.logp)
        self._cum = np.cumsum(self.probs, axis=1).tolist()
        self._logp_rows = self.logp.tolist()

    def sample(self, state: int, rng: Rng) -> tuple[int, float]:
        a = _draw(self._cum[state], rng.uniform())
        return a, self._logp_rows[state][a]


def collect_steps(model: MdpModel, sampler, n_steps: int, max_len: int, rng: Rng) -> list[Trajectory]:
    """Roll out episodes until exactly ``n_steps`` transitions are gathered.

    The final episode is cut at the budget and marked truncated, just like a
    time-limit cut, so it is bootstrapped downstream.
    """
    if n_steps < 1:
        raise UsageError("batch size must be >= 1")
    out = []
    left = n_steps
    while left > 0:
        traj = rollout(model, sampler, min(max_len, left), rng)
        out.append(traj)
        left -= len(traj)
    return out


def collect_episodes(model: MdpModel, sampler, n_episodes: int, max_len: int, rng: Rng) -> list[Trajectory]:
    if n_episodes < 1:
        raise UsageError("episode count must be >= 1")
    return [rollout(model, sampler, max_len, rng) for _ in range(n_episodes)]


def worker_count(requested: int) -> int:
    cap = os.environ.get("GPI_RL_THREADS")
    if cap is not None:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"GPI_RL_THREADS must be an integer, got {cap!r}") from None
    return max(1, requested)


def collect_parallel(
    model: MdpModel, sampler, n_steps: int, max_len: int, rngs: list[Rng]
) -> list[Trajectory]:
    """Split the step budget over one environment instance per rng stream.

    Results are concatenated in stream order, so the output does not depend on
    how many threads actually ran.
    """
    k = len(rngs)
    shares = [n_steps // k + (1 if i < n_steps % k else 0) for i in range(k)]
    jobs = [(share, r) for share, r in zip(shares, rngs) if share > 0]
    if len(jobs) == 1:
        return collect_steps(model, sampler, jobs[0][0], max_len, jobs[0][1])
    with ThreadPoolExecutor(max_workers=worker_count(len(jobs))) as pool:
        parts = list(pool.map(lambda job: collect_steps(model, sampler, job[0], max_len, job[1]), jobs))
    return [t for part in parts for t in part]


@dataclass
class EpisodeStats:
    episodes: int
    mean_return: float
    success_rate: float


def episode_stats(model: MdpModel, trajs: list[Trajectory], max_len: int) -> EpisodeStats:
    """Undiscounted return and goal rate over episodes that actually ended.

    Segments cut by the batch budget (shorter than max_len, not terminated)
    are not counted.
    """
    done = [t for t in trajs if t.terminated or len(t) >= max_len]
    if not done:
        return EpisodeStats(0, 0.0, 0.0)
    rets = [t.total_reward(1.0) for t in done]
    wins = [t.terminated and t.final_state in model.goal for t in done]
    return EpisodeStats(len(done), float(np.mean(rets)), float(np.mean(wins)))


@dataclass
class RolloutBatch:
    states: np.ndarray
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    old_log_prob: np.ndarray
    old_value: np.ndarray
    next_value: np.ndarray
    advantage: np.ndarray
    return_target: np.ndarray
    bounds: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, idx: np.ndarray) -> "RolloutBatch":
        """Row subset (bounds are dropped: a minibatch is not a set of episodes)."""
        fields = {k: getattr(self, k)[idx] for k in _ARRAYS}
        return RolloutBatch(**fields, bounds=[])

    def validate(self) -> None:
        n = len(self.actions)
        for k in _ARRAYS:
            if len(getattr(self, k)) != n:
                raise UsageError(f"batch field {k} has the wrong length")
        if not np.all(np.isfinite(self.old_log_prob)) or not np.all(np.isfinite(self.advantage)):
            raise UsageError("batch has non-finite log-probs or advantages")


_ARRAYS = (
    "states", "features", "actions", "rewards", "next_states", "terminated", "truncated",
    "old_log_prob", "old_value", "next_value", "advantage", "return_target",
)


def build_batch(
    trajs: list[Trajectory],
    feature_table: np.ndarray,
    value_table: np.ndarray | None,
    terminal: frozenset[int],
    gamma: float,
    lam: float,
    critic_target: str = "lambda",
) -> RolloutBatch:
    """Flatten trajectories and attach GAE advantages and critic targets.

    Truncated segments get the timeout bootstrap folded into their last reward
    before GAE runs with a terminal tail. ``critic_target`` picks the
    lambda-return (advantage + old value) or the one-step TD target.
    """
    if critic_target not in ("lambda", "td"):
        raise UsageError("critic_target must be 'lambda' or 'td'")
    vt = np.zeros(len(feature_table)) if value_table is None else np.asarray(value_table, dtype=float)
    cfg = estimators.GaeConfig(gamma, lam)
    cols: dict[str, list] = {k: [] for k in _ARRAYS if k != "features"}
    bounds = []
    pos = 0
    for traj in trajs:
        st = np.array(traj.states)
        nxt = np.array([tr.next_state for tr in traj.transitions])
        rew = np.array(traj.rewards, dtype=float)
        term = np.array([tr.terminated for tr in traj.transitions])
        trunc = np.array([tr.truncated for tr in traj.transitions])
        v = vt[st]
        nv = np.where(term, 0.0, vt[nxt])
        shaped = rew.copy()
        shaped[-1] = estimators.timeout_bootstrap(rew[-1], nv[-1], gamma, traj.truncated)
        adv = estimators.gae(shaped, np.append(v, 0.0), cfg, terminal=True)
        target = adv + v if critic_target == "lambda" else rew + gamma * nv
        for k, arr in (
            ("states", st), ("actions", traj.actions), ("rewards", rew), ("next_states", nxt),
            ("terminated", term), ("truncated", trunc), ("old_log_prob", traj.log_probs),
            ("old_value", v), ("next_value", nv), ("advantage", adv), ("return_target", target),
        ):
            cols[k].append(np.asarray(arr))
        bounds.append((pos, pos + len(traj)))
        pos += len(traj)
    arrays = {k: np.concatenate(v) for k, v in cols.items()}
    arrays["states"] = arrays["states"].astype(int)
    arrays["actions"] = arrays["actions"].astype(int)
    arrays["next_states"] = arrays["next_states"].astype(int)
    arrays["old_log_prob"] = arrays["old_log_prob"].astype(float)
    batch = RolloutBatch(features=feature_table[arrays["states"]], bounds=bounds, **arrays)
    batch.validate()
    return batch
