"""Exact dynamic programming over explicit models.

These routines are the ground truth every sampling-based estimator is tested
against: linear-solve policy evaluation, V/Q conversions, greedy improvement,
value iteration, policy iteration, and goal-absorption probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NonEpisodicModelError, UsageError
from .mdp import MdpModel, TabularPolicy

# Conditioning beyond this is treated as a singular (non-episodic) system.
_MAX_COND = 1e12


@dataclass(frozen=True)
class GpiConfig:
    gamma: float = 0.9
    delta: float = 1e-12
    max_sweeps: int = 100_000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise UsageError("gamma must lie in [0, 1]")
        if self.delta <= 0:
            raise UsageError("delta must be > 0")


def _nonterminal(model: MdpModel) -> np.ndarray:
    mask = np.ones(model.n_states, dtype=bool)
    mask[list(model.terminal)] = False
    return mask


def policy_matrices(model: MdpModel, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state matrix P_pi and expected one-step reward r_pi under a policy."""
    pi = policy.probs
    P_pi = np.einsum("sa,sat->st", pi, model.transition_tensor)
    r_pi = np.einsum("sa,sa->s", pi, model.expected_reward)
    return P_pi, r_pi


def evaluate_policy_exact(model: MdpModel, policy: TabularPolicy, gamma: float) -> np.ndarray:
    """Solve V = r_pi + gamma P_pi V on non-terminal states; terminal V is 0."""
    _check_shapes(model, policy)
    P_pi, r_pi = policy_matrices(model, policy)
    live = _nonterminal(model)
    A = np.eye(int(live.sum())) - gamma * P_pi[np.ix_(live, live)]
    b = r_pi[live]
    try:
        if np.linalg.cond(A) > _MAX_COND:
            raise np.linalg.LinAlgError("ill-conditioned")
        v_live = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NonEpisodicModelError(
            f"Bellman system is singular at gamma={gamma}: the policy does not reach a terminal state surely"
        ) from exc
    v = np.zeros(model.n_states)
    v[live] = v_live
    return v


def evaluate_policy_iterative(
    model: MdpModel, policy: TabularPolicy, gamma: float, delta: float = 1e-12, max_sweeps: int = 1_000_000
) -> np.ndarray:
    """Synchronous Bellman sweeps until the max change is <= delta."""
    _check_shapes(model, policy)
    P_pi, r_pi = policy_matrices(model, policy)
    v = np.zeros(model.n_states)
    for _ in range(max_sweeps):
        new = r_pi + gamma * P_pi @ v
        resid = float(np.max(np.abs(new - v)))
        v = new
        if resid <= delta:
            return v
    raise ConvergenceError("iterative policy evaluation did not converge", resid)


def bellman_residual(model: MdpModel, policy: TabularPolicy, v: np.ndarray, gamma: float) -> np.ndarray:
    P_pi, r_pi = policy_matrices(model, policy)
    res = r_pi + gamma * P_pi @ v - v
    res[~_nonterminal(model)] = v[~_nonterminal(model)]
    return res


def q_from_v(model: MdpModel, v: np.ndarray, gamma: float) -> np.ndarray:
    q = model.expected_reward + gamma * model.transition_tensor @ v
    q[~_nonterminal(model)] = 0.0
    return q


def v_from_q(policy: TabularPolicy, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != policy.probs.shape:
        raise UsageError(f"Q shape {q.shape} does not match policy {policy.probs.shape}")
    return np.einsum("sa,sa->s", policy.probs, q)


def advantage_exact(model: MdpModel, policy: TabularPolicy, gamma: float) -> np.ndarray:
    v = evaluate_policy_exact(model, policy, gamma)
    return q_from_v(model, v, gamma) - v[:, None]


def greedy_actions(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximizer, i.e. ties go to the lowest index
    return np.argmax(np.asarray(q), axis=1)


def greedy_improvement(q: np.ndarray) -> TabularPolicy:
    q = np.asarray(q, dtype=float)
    return TabularPolicy.deterministic(greedy_actions(q), q.shape[1])


def value_iteration(
    model: MdpModel, cfg: GpiConfig, history: list | None = None
) -> tuple[np.ndarray, TabularPolicy]:
    """Bellman optimality sweeps until max |V_new - V| <= delta; returns (V, greedy policy).

    ``history`` (if given) receives the residual of every sweep.
    """
    v = np.zeros(model.n_states)
    live = _nonterminal(model)
    resid = np.inf
    for _ in range(cfg.max_sweeps):
        q = model.expected_reward + cfg.gamma * model.transition_tensor @ v
        new = np.where(live, q.max(axis=1), 0.0)
        resid = float(np.max(np.abs(new - v)))
        v = new
        if history is not None:
            history.append(resid)
        if resid <= cfg.delta:
            return v, greedy_improvement(q_from_v(model, v, cfg.gamma))
    raise ConvergenceError(f"value iteration hit max_sweeps={cfg.max_sweeps}", resid)


def policy_iteration(
    model: MdpModel, cfg: GpiConfig, initial: TabularPolicy | None = None, history: list | None = None
) -> tuple[TabularPolicy, np.ndarray]:
    """Alternate exact evaluation and greedy improvement until the policy is stable.

    When ``history`` is given, the value vector of every evaluated policy is
    appended to it (used by the monotonicity checks).
    """
    policy = initial or TabularPolicy.uniform(model.n_states, model.n_actions)
    is_det = np.all((policy.probs == 0.0) | (policy.probs == 1.0))
    actions = policy.greedy_actions() if is_det else None
    for _ in range(cfg.max_sweeps):
        v = evaluate_policy_exact(model, policy, cfg.gamma)
        if history is not None:
            history.append(v)
        q = q_from_v(model, v, cfg.gamma)
        new = greedy_actions(q)
        if actions is not None:
            # an incumbent action that still attains the max is kept, so equal maximizers cannot cycle
            incumbent = q[np.arange(model.n_states), actions]
            new = np.where(incumbent >= q.max(axis=1) - 1e-12, actions, new)
            if np.array_equal(new, actions):
                return policy, v
        actions = new
        policy = TabularPolicy.deterministic(actions, model.n_actions)
    raise ConvergenceError("policy iteration did not stabilise", float("nan"))


def absorption_probabilities(model: MdpModel, policy: TabularPolicy, goal: frozenset[int] | None = None) -> np.ndarray:
    """Probability, from each state, that the policy's chain ever enters the goal set.

    States that cannot reach the goal get 0; the rest form a transient system,
    so the reduced linear solve is always non-singular.
    """
    goal = model.goal if goal is None else goal
    P_pi, _ = policy_matrices(model, policy)
    n = model.n_states
    # backward reachability over edges with positive probability
    can_reach = np.zeros(n, dtype=bool)
    can_reach[list(goal)] = True
    frontier = list(goal)
    pred = [np.flatnonzero(P_pi[:, t] > 0) for t in range(n)]
    while frontier:
        t = frontier.pop()
        for s in pred[t]:
            if not can_reach[s] and s not in model.terminal:
                can_reach[s] = True
                frontier.append(s)
    x = np.zeros(n)
    x[list(goal)] = 1.0
    unknown = can_reach & _nonterminal(model)
    if unknown.any():
        idx = np.flatnonzero(unknown)
        A = np.eye(len(idx)) - P_pi[np.ix_(idx, idx)]
        b = P_pi[np.ix_(idx, list(goal))].sum(axis=1)
        x[idx] = np.linalg.solve(A, b)
    return x


def success_probability(model: MdpModel, policy: TabularPolicy) -> float:
    """Exact probability of reaching the goal from the initial distribution."""
    return float(model.initial_dist @ absorption_probabilities(model, policy))


def _check_shapes(model: MdpModel, policy: TabularPolicy) -> None:
    if policy.probs.shape != (model.n_states, model.n_actions):
        raise UsageError(f"policy shape {policy.probs.shape} does not match model")


def values_csv(v: np.ndarray) -> str:
    lines = ["state,value"] + [f"{s},{float(x)!r}" for s, x in enumerate(v)]
    return "\n".join(lines) + "\n"


def q_csv(q: np.ndarray) -> str:
    lines = ["state,action,value"]
    for s in range(q.shape[0]):
        for a in range(q.shape[1]):
            lines.append(f"{s},{a},{float(q[s, a])!r}")
    return "\n".join(lines) + "\n"


def read_table_csv(text: str) -> np.ndarray:
    """Parse a ``state,value`` or ``state,action,value`` dump back to an array."""
    lines = [ln for ln in text.strip().splitlines()]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    if header == ["state", "value"]:
        return np.array([float(r[1]) for r in rows])
    if header == ["state", "action", "value"]:
        n_s = max(int(r[0]) for r in rows) + 1
        n_a = max(int(r[1]) for r in rows) + 1
        q = np.zeros((n_s, n_a))
        for r in rows:
            q[int(r[0]), int(r[1])] = float(r[2])
        return q
    raise UsageError(f"unrecognised table header {lines[0]!r}")
