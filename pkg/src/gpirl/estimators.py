"""Return and advantage estimators over a single trajectory.

Conventions: ``rewards`` has length T (r_1..r_T), ``values`` has length T+1
(V(s_0)..V(s_T)); the last slot is the bootstrap value. Passing
``terminal=True`` forces that slot to 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise UsageError("gamma and lambda must lie in [0, 1]")


def _as_inputs(rewards, values, terminal: bool) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(rewards, dtype=float)
    v = np.array(values, dtype=float)
    if v.shape != (len(r) + 1,):
        raise UsageError(f"values must have length T+1={len(r) + 1}, got {v.shape}")
    if terminal:
        v[-1] = 0.0
    return r, v


def discounted_returns(rewards, gamma: float, bootstrap: float = 0.0) -> np.ndarray:
    """G_t = r_{t+1} + gamma G_{t+1}, with G_T = bootstrap (0 for a finished episode)."""
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    g = bootstrap
    for t in range(len(r) - 1, -1, -1):
        g = r[t] + gamma * g
        out[t] = g
    return out


def td_errors(rewards, values, gamma: float, terminal: bool) -> np.ndarray:
    r, v = _as_inputs(rewards, values, terminal)
    return r + gamma * v[1:] - v[:-1]


def n_step_return(rewards, values, gamma: float, n: int, t: int) -> float:
    """r_{t+1} + ... + gamma^{k-1} r_{t+k} + gamma^k V(s_{t+k}) with k = min(n, T - t)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    end = min(t + n, len(r))
    g = v[end]
    for k in range(end - 1, t - 1, -1):
        g = r[k] + gamma * g
    return float(g)


def n_step_advantage(rewards, values, gamma: float, n: int, t: int) -> float:
    return n_step_return(rewards, values, gamma, n, t) - float(np.asarray(values, dtype=float)[t])


def gae(rewards, values, cfg: GaeConfig, terminal: bool) -> np.ndarray:
    """A_t = delta_t + gamma*lambda*A_{t+1}, A_T = 0."""
    delta = td_errors(rewards, values, cfg.gamma, terminal)
    out = np.empty_like(delta)
    acc = 0.0
    decay = cfg.gamma * cfg.lam
    for t in range(len(delta) - 1, -1, -1):
        acc = delta[t] + decay * acc
        out[t] = acc
    return out


def lambda_return(rewards, values, cfg: GaeConfig, terminal: bool) -> np.ndarray:
    """G_t^lambda computed as GAE plus the value baseline (O(T))."""
    _, v = _as_inputs(rewards, values, terminal)
    return gae(rewards, v, cfg, terminal) + v[:-1]


def lambda_return_direct(rewards, values, cfg: GaeConfig, terminal: bool) -> np.ndarray:
    """Finite-horizon weighted sum of n-step returns (O(T^2) reference form).

    G_t^lambda = (1-lambda) sum_{l=1}^{T-t-1} lambda^{l-1} G_{t:t+l} + lambda^{T-t-1} G_{t:T}
    """
    r, v = _as_inputs(rewards, values, terminal)
    T = len(r)
    out = np.empty(T)
    lam = cfg.lam
    for t in range(T):
        h = T - t
        acc = 0.0
        for l in range(1, h):
            acc += (1.0 - lam) * lam ** (l - 1) * n_step_return(r, v, cfg.gamma, l, t)
        acc += lam ** (h - 1) * n_step_return(r, v, cfg.gamma, h, t)
        out[t] = acc
    return out


def lambda_weights(lam: float, horizon: int) -> np.ndarray:
    """Weights on G_{t:t+1}..G_{t:t+h} in the finite-horizon lambda-return."""
    w = np.array([(1.0 - lam) * lam ** (l - 1) for l in range(1, horizon)] + [lam ** (horizon - 1)])
    return w


def timeout_bootstrap(last_reward: float, bootstrap_value: float, gamma: float, truncated: bool) -> float:
    """Fold the tail value into the last reward when an episode was cut by a time limit."""
    if truncated:
        return last_reward + gamma * bootstrap_value
    return last_reward


def normalize_advantages(adv, eps: float = 1e-8) -> np.ndarray:
    a = np.asarray(adv, dtype=float)
    if a.size == 0:
        raise UsageError("cannot normalize an empty advantage list")
    return (a - a.mean()) / (a.std() + eps)


@dataclass
class RunningMoments:
    """Exponential moving mean/variance of observations.

    ``strict_paper`` swaps in the printed appendix variance line verbatim,
    ``var += rate*(batch_var - var + batch_mean - mean*batch_mean)``, which is
    kept only for comparison; the default is the mixture-variance update.
    """

    mean: np.ndarray
    var: np.ndarray
    rate: float = 0.01
    eps: float = 1e-8
    strict_paper: bool = False
    count: int = field(default=0)

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float)
        self.var = np.array(self.var, dtype=float)
        if not 0.0 < self.rate <= 1.0:
            raise UsageError("moment rate must lie in (0, 1]")
        if self.eps <= 0:
            raise UsageError("eps must be > 0")

    @classmethod
    def zeros(cls, dim: int, **kw) -> "RunningMoments":
        return cls(np.zeros(dim), np.ones(dim), **kw)

    def copy(self) -> "RunningMoments":
        return RunningMoments(self.mean.copy(), self.var.copy(), self.rate, self.eps, self.strict_paper, self.count)


def update_moments(m: RunningMoments, batch) -> RunningMoments:
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise UsageError("moment update needs a non-empty batch")
    bm = x.mean(axis=0)
    bv = x.var(axis=0)
    a = m.rate
    out = m.copy()
    out.mean = m.mean + a * (bm - m.mean)
    if m.strict_paper:
        out.var = m.var + a * (bv - m.var + bm - out.mean * bm)
    else:
        out.var = m.var + a * (bv - m.var + (1.0 - a) * (bm - m.mean) ** 2)
    out.var = np.maximum(out.var, 0.0)
    out.count = m.count + 1
    return out


def normalize_observation(m: RunningMoments, s) -> np.ndarray:
    x = np.asarray(s, dtype=float)
    if x.shape[-1] != m.mean.shape[0]:
        raise UsageError("observation dimension does not match moments")
    return (x - m.mean) / (np.sqrt(m.var) + m.eps)
