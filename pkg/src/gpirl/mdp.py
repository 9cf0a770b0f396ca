"""Tabular MDPs, trajectories, the 4x4 FrozenLake, and seeded random MDPs.

Dynamics are stored explicitly as ``(s, a) -> [(s_next, reward, prob), ...]``.
Dense views (transition tensor, expected rewards) are derived lazily for the
DP code; sampling uses per-row cumulative tables.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .errors import UsageError

PROB_TOL = 1e-12

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3
# (row delta, col delta) per action
MOVES = {LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}
OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, UP: DOWN, DOWN: UP}
PERPENDICULAR = {LEFT: (UP, DOWN), RIGHT: (UP, DOWN), UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT)}

LAKE_SIZE = 4
LAKE_HOLES = frozenset({5, 7, 11, 12})
LAKE_GOAL = 15


class Rng:
    """Caller-owned random source backed by numpy's counter-based Philox.

    ``stream`` selects an independent substream of the same seed, which is how
    parallel rollout workers get distinct, reproducible randomness.
    Scalar uniforms are served from a buffer to keep per-step overhead low.
    """

    _BLOCK = 4096

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, self.stream])))
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def spawn(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Explicit tabular dynamics p(s', r | s, a).

    ``goal`` marks terminal states that count as success; it only matters for
    success-rate metrics and absorption probabilities.
    """

    n_states: int
    n_actions: int
    dynamics: dict[tuple[int, int], tuple[tuple[int, float, float], ...]]
    terminal: frozenset[int]
    initial_dist: np.ndarray
    goal: frozenset[int] = field(default_factory=frozenset)
    name: str = "mdp"

    def __post_init__(self):
        init = np.asarray(self.initial_dist, dtype=float)
        object.__setattr__(self, "initial_dist", init)
        if init.shape != (self.n_states,) or abs(init.sum() - 1.0) > PROB_TOL or (init < 0).any():
            raise UsageError("initial_dist must be a probability vector over states")
        for s in range(self.n_states):
            for a in range(self.n_actions):
                rows = self.dynamics.get((s, a), ())
                if s in self.terminal:
                    if rows:
                        raise UsageError(f"terminal state {s} has outgoing entries")
                    continue
                total = math.fsum(p for _, _, p in rows)
                if abs(total - 1.0) > PROB_TOL:
                    raise UsageError(f"p(.|s={s}, a={a}) sums to {total!r}")
                for s2, _, p in rows:
                    if not 0 <= s2 < self.n_states or not 0.0 <= p <= 1.0:
                        raise UsageError(f"bad entry {(s2, p)} for (s={s}, a={a})")

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal

    @cached_property
    def transition_tensor(self) -> np.ndarray:
        """P[s, a, s'] (rows of terminal states are zero)."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        for (s, a), rows in self.dynamics.items():
            for s2, _, p in rows:
                P[s, a, s2] += p
        return P

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """r(s, a) = sum over (s', r) of p * r."""
        R = np.zeros((self.n_states, self.n_actions))
        for (s, a), rows in self.dynamics.items():
            R[s, a] = math.fsum(p * r for _, r, p in rows)
        return R

    @cached_property
    def _samplers(self) -> dict[tuple[int, int], tuple[list[float], tuple]]:
        out = {}
        for key, rows in self.dynamics.items():
            cum = np.cumsum([p for _, _, p in rows]).tolist()
            out[key] = (cum, rows)
        return out

    @cached_property
    def _initial_cum(self) -> list[float]:
        return np.cumsum(self.initial_dist).tolist()

    def sample_initial(self, rng: Rng) -> int:
        return _draw(self._initial_cum, rng.uniform())


def _draw(cum: list[float], u: float) -> int:
    i = bisect.bisect_right(cum, u * cum[-1])
    return min(i, len(cum) - 1)


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    terminated: bool
    truncated: bool


@dataclass
class Trajectory:
    """One episode or rollout segment, plus optional per-step aux arrays."""

    transitions: list[Transition]
    log_probs: list[float] | None = None
    values: list[float] | None = None

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> list[int]:
        return [tr.state for tr in self.transitions]

    @property
    def actions(self) -> list[int]:
        return [tr.action for tr in self.transitions]

    @property
    def rewards(self) -> list[float]:
        return [tr.reward for tr in self.transitions]

    @property
    def terminated(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].terminated

    @property
    def truncated(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].truncated

    @property
    def final_state(self) -> int:
        return self.transitions[-1].next_state

    def total_reward(self, gamma: float = 1.0) -> float:
        g = 0.0
        for tr in reversed(self.transitions):
            g = tr.reward + gamma * g
        return g

    def validate(self) -> None:
        ts = self.transitions
        for k in range(len(ts) - 1):
            if ts[k].next_state != ts[k + 1].state:
                raise UsageError(f"trajectory breaks contiguity at step {k}")
            if ts[k].terminated or ts[k].truncated:
                raise UsageError(f"episode-ending flag set mid-trajectory at step {k}")
        for aux in (self.log_probs, self.values):
            if aux is not None and len(aux) != len(ts):
                raise UsageError("aux array length differs from transitions")


class ActionSampler(Protocol):
    def sample(self, state: int, rng: Rng) -> tuple[int, float]: ...


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic |S| x |A| matrix pi(a|s)."""

    probs: np.ndarray

    def __post_init__(self):
        P = np.array(self.probs, dtype=float)
        if P.ndim != 2:
            raise UsageError("policy matrix must be 2-D")
        if (P < 0).any() or (P > 1).any() or np.abs(P.sum(axis=1) - 1.0).max() > PROB_TOL:
            raise UsageError("policy rows must be probability vectors")
        P.setflags(write=False)
        object.__setattr__(self, "probs", P)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        P = np.zeros((len(actions), n_actions))
        P[np.arange(len(actions)), np.asarray(actions)] = 1.0
        return cls(P)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @cached_property
    def _cum(self) -> list[list[float]]:
        return np.cumsum(self.probs, axis=1).tolist()

    @cached_property
    def _logp(self) -> list[list[float]]:
        with np.errstate(divide="ignore"):
            return np.log(self.probs).tolist()

    def sample(self, state: int, rng: Rng) -> tuple[int, float]:
        a = _draw(self._cum[state], rng.uniform())
        return a, self._logp[state][a]


def _lake_move(s: int, a: int) -> int | None:
    """Cell reached from s by action a, or None if the move leaves the grid."""
    i, j = divmod(s, LAKE_SIZE)
    di, dj = MOVES[a]
    ni, nj = i + di, j + dj
    if 0 <= ni < LAKE_SIZE and 0 <= nj < LAKE_SIZE:
        return ni * LAKE_SIZE + nj
    return None


def _lake_slip_target(s: int, intended: int, slip: int) -> int:
    # A sideways slip into the wall deflects backward; a blocked backward move stays put.
    nxt = _lake_move(s, slip)
    if nxt is None:
        nxt = _lake_move(s, OPPOSITE[intended])
    return s if nxt is None else nxt


def frozen_lake(slippery: bool) -> MdpModel:
    """The 4x4 FrozenLake: start 0, holes {5, 7, 11, 12}, goal 15.

    Actions are 0=left, 1=down, 2=right, 3=up. Off-grid moves leave the agent
    in place. On slippery ice the intended move happens with probability 0.8
    and each sideways direction with 0.1.
    """
    terminal = LAKE_HOLES | {LAKE_GOAL}
    n = LAKE_SIZE * LAKE_SIZE
    dynamics: dict[tuple[int, int], tuple[tuple[int, float, float], ...]] = {}
    for s in range(n):
        if s in terminal:
            continue
        for a in range(4):
            outcomes: dict[int, float] = {}
            main = _lake_move(s, a)
            main = s if main is None else main
            if slippery:
                outcomes[main] = outcomes.get(main, 0.0) + 0.8
                for side in PERPENDICULAR[a]:
                    tgt = _lake_slip_target(s, a, side)
                    outcomes[tgt] = outcomes.get(tgt, 0.0) + 0.1
            else:
                outcomes[main] = 1.0
            dynamics[(s, a)] = tuple(
                (s2, 1.0 if s2 == LAKE_GOAL else 0.0, p) for s2, p in sorted(outcomes.items())
            )
    init = np.zeros(n)
    init[0] = 1.0
    return MdpModel(
        n_states=n,
        n_actions=4,
        dynamics=dynamics,
        terminal=frozenset(terminal),
        initial_dist=init,
        goal=frozenset({LAKE_GOAL}),
        name="frozenlake-slippery" if slippery else "frozenlake",
    )


def random_mdp(n_states: int, n_actions: int, seed: int) -> MdpModel:
    """Seeded random MDP whose last state is the only terminal (and goal) state.

    Every non-terminal (s, a) row is a random distribution over all states with
    uniform [0, 1) rewards per outcome. Episodes start uniformly among the
    non-terminal states.
    """
    if n_states < 2 or n_actions < 1:
        raise UsageError("random_mdp needs n_states >= 2 and n_actions >= 1")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 7919])))
    term = n_states - 1
    dynamics = {}
    for s in range(term):
        for a in range(n_actions):
            w = gen.random(n_states) + 1e-3
            p = w / w.sum()
            # force exact normalization after rounding
            p[-1] = 1.0 - math.fsum(p[:-1])
            r = gen.random(n_states)
            dynamics[(s, a)] = tuple((s2, float(r[s2]), float(p[s2])) for s2 in range(n_states))
    init = np.zeros(n_states)
    init[:term] = 1.0 / term
    return MdpModel(
        n_states=n_states,
        n_actions=n_actions,
        dynamics=dynamics,
        terminal=frozenset({term}),
        initial_dist=init,
        goal=frozenset({term}),
        name=f"random-mdp:{n_states}:{n_actions}:{seed}",
    )


def step(model: MdpModel, s: int, a: int, rng: Rng) -> Transition:
    if s in model.terminal:
        raise UsageError(f"cannot step from terminal state {s}")
    if not 0 <= a < model.n_actions:
        raise UsageError(f"action {a} out of range")
    cum, rows = model._samplers[(s, a)]
    s2, r, _ = rows[_draw(cum, rng.uniform())]
    return Transition(s, a, r, s2, s2 in model.terminal, False)


def rollout(
    model: MdpModel,
    policy: ActionSampler,
    max_len: int,
    rng: Rng,
    value_fn: Callable[[int], float] | Sequence[float] | None = None,
    start_state: int | None = None,
) -> Trajectory:
    """Run one episode, truncating after ``max_len`` steps.

    ``value_fn`` (callable or per-state table) fills the value_estimate aux
    array; log-probabilities come from the sampler.
    """
    if max_len < 1:
        raise UsageError("max_len must be >= 1")
    s = model.sample_initial(rng) if start_state is None else start_state
    if s in model.terminal:
        raise UsageError(f"episode cannot start in terminal state {s}")
    samplers = model._samplers
    terminal = model.terminal
    transitions: list[Transition] = []
    log_probs: list[float] = []
    values: list[float] | None = [] if value_fn is not None else None
    lookup = value_fn.__getitem__ if value_fn is not None and not callable(value_fn) else value_fn
    for t in range(max_len):
        a, lp = policy.sample(s, rng)
        cum, rows = samplers[(s, a)]
        s2, r, _ = rows[_draw(cum, rng.uniform())]
        done = s2 in terminal
        transitions.append(Transition(s, a, r, s2, done, (not done) and t == max_len - 1))
        log_probs.append(lp)
        if values is not None:
            values.append(float(lookup(s)))
        if done:
            break
        s = s2
    return Trajectory(transitions, log_probs, values)


def transition_counts(model: MdpModel, s: int, a: int, n: int, rng: Rng) -> dict[int, int]:
    """Empirical next-state histogram over ``n`` draws from (s, a)."""
    counts: dict[int, int] = {}
    for _ in range(n):
        s2 = step(model, s, a, rng).next_state
        counts[s2] = counts.get(s2, 0) + 1
    return counts


def dump_model(model: MdpModel) -> str:
    """Line-oriented text dump: header then ``s a s' reward prob`` rows."""
    lines = [f"MDP v1 {model.n_states} {model.n_actions}"]
    for (s, a) in sorted(model.dynamics):
        for s2, r, p in model.dynamics[(s, a)]:
            lines.append(f"{s} {a} {s2} {r!r} {p!r}")
    return "\n".join(lines) + "\n"


def parse_model_dump(text: str) -> tuple[int, int, dict[tuple[int, int], tuple[tuple[int, float, float], ...]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[:2] != ["MDP", "v1"]:
        raise UsageError("not an 'MDP v1' dump")
    n_states, n_actions = int(head[2]), int(head[3])
    dyn: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 5:
            raise UsageError(f"line {k}: expected 5 fields")
        s, a, s2 = int(parts[0]), int(parts[1]), int(parts[2])
        dyn.setdefault((s, a), []).append((s2, float(parts[3]), float(parts[4])))
    return n_states, n_actions, {k: tuple(v) for k, v in dyn.items()}


def one_hot_features(n_states: int) -> np.ndarray:
    return np.eye(n_states)


def iter_episodes(
    model: MdpModel, policy: ActionSampler, episodes: int, max_len: int, rng: Rng
) -> Iterable[Trajectory]:
    for _ in range(episodes):
        yield rollout(model, policy, max_len, rng)
