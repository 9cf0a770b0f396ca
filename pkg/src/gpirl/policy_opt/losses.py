"""Surrogate objectives, value losses and update-size controls for PPO."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import approx
from ..errors import NumericalError, UsageError

RATIO_EXP_CAP = 60.0
LR_MIN, LR_MAX = 1e-6, 1e-2


@dataclass
class ClampCounter:
    """Counts log-ratio exponents that had to be clamped to avoid overflow."""

    clamped: int = 0


def importance_ratio(new_log_prob, old_log_prob, counter: ClampCounter | None = None):
    """pi_new / pi_old computed as exp(new - old), exponent clamped to +-60."""
    diff = np.asarray(new_log_prob, dtype=float) - np.asarray(old_log_prob, dtype=float)
    if not np.all(np.isfinite(diff)):
        raise NumericalError("non-finite log-probability in importance ratio")
    over = np.abs(diff) > RATIO_EXP_CAP
    if counter is not None:
        counter.clamped += int(np.count_nonzero(over))
    ratio = np.exp(np.clip(diff, -RATIO_EXP_CAP, RATIO_EXP_CAP))
    return float(ratio) if ratio.ndim == 0 else ratio


def _check_eps(clip_eps: float) -> None:
    if not 0.0 < clip_eps < 1.0:
        raise UsageError("clip_eps must lie in (0, 1)")


def clipped_surrogate(ratio, advantage, clip_eps: float):
    """min(ratio*A, clip(ratio, 1-eps, 1+eps)*A) and whether the clipped branch won.

    On an exact tie the unclipped branch is taken.
    """
    _check_eps(clip_eps)
    r = np.asarray(ratio, dtype=float)
    a = np.asarray(advantage, dtype=float)
    plain = r * a
    clipped = np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a
    flag = clipped < plain
    value = np.where(flag, clipped, plain)
    if value.ndim == 0:
        return float(value), bool(flag)
    return value, flag


def clipped_surrogate_grad(ratio, advantage, clip_eps: float) -> np.ndarray:
    """Derivative of the clipped surrogate with respect to the ratio (0 where saturated)."""
    _, flag = clipped_surrogate(ratio, advantage, clip_eps)
    return np.where(flag, 0.0, np.asarray(advantage, dtype=float))


def clipped_value_loss(new_value, old_value, target, clip_eps: float):
    """max[(V - y)^2, (clip(V, V_old - eps, V_old + eps) - y)^2]."""
    v = np.asarray(new_value, dtype=float)
    vo = np.asarray(old_value, dtype=float)
    y = np.asarray(target, dtype=float)
    plain = (v - y) ** 2
    clipped = (np.clip(v, vo - clip_eps, vo + clip_eps) - y) ** 2
    out = np.maximum(plain, clipped)
    return float(out) if out.ndim == 0 else out


def clipped_value_loss_grad(new_value, old_value, target, clip_eps: float) -> np.ndarray:
    v = np.asarray(new_value, dtype=float)
    vo = np.asarray(old_value, dtype=float)
    y = np.asarray(target, dtype=float)
    vc = np.clip(v, vo - clip_eps, vo + clip_eps)
    plain = (v - y) ** 2
    use_clipped = (vc - y) ** 2 > plain
    inside = (v >= vo - clip_eps) & (v <= vo + clip_eps)
    # the clipped branch only moves with V while V is inside the band
    return np.where(use_clipped, np.where(inside, 2.0 * (vc - y), 0.0), 2.0 * (v - y))


def adaptive_lr(current_lr: float, measured_kl: float, target_kl: float) -> float:
    """Shrink by 1.5 when KL > 2*target, grow by 1.5 when KL < target/2, clamp to [1e-6, 1e-2]."""
    if current_lr <= 0 or target_kl <= 0:
        raise UsageError("learning rate and target KL must be > 0")
    lr = current_lr
    if measured_kl > 2.0 * target_kl:
        lr = current_lr / 1.5
    elif measured_kl < target_kl / 2.0:
        lr = current_lr * 1.5
    return float(min(max(lr, LR_MIN), LR_MAX))


def clip_gradient(g: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0:
        raise UsageError("gradient norm cap must be > 0")
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def value_loss_and_grad(spec: approx.MlpSpec, params: np.ndarray, features, targets, weights=None):
    """Weighted mean squared error of a scalar value head and its parameter gradient."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    w = np.full(len(y), 1.0 / len(y)) if weights is None else np.asarray(weights, dtype=float)
    out, cache = approx.forward_cache(spec, params, x)
    err = out[:, 0] - y
    loss = float(np.sum(w * err**2))
    grad = approx.backward_cache(spec, params, cache, (2.0 * w * err)[:, None])
    return loss, grad


@dataclass(frozen=True)
class LossWeights:
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    value_clip: bool = True


def total_ppo_loss(
    mb,
    actor_spec: approx.MlpSpec,
    actor: np.ndarray,
    critic_spec: approx.MlpSpec,
    critic: np.ndarray,
    cfg,
    counter: ClampCounter | None = None,
) -> tuple[float, tuple[np.ndarray, np.ndarray], dict]:
    """-mean(L_clip) + c1*mean(L_value) - c2*mean(H) with gradients for actor and critic.

    ``mb`` needs ``features``, ``actions``, ``old_log_prob``, ``old_value``,
    ``advantage`` and ``return_target`` arrays; ``cfg`` needs ``clip_eps``,
    ``vf_coef``, ``ent_coef`` and ``value_clip``.
    """
    x = mb.features
    n = len(mb.actions)
    rows = np.arange(n)
    logits, a_cache = approx.forward_cache(actor_spec, actor, x)
    logp_all = approx.log_softmax(logits)
    probs = np.exp(logp_all)
    new_logp = logp_all[rows, mb.actions]
    ratio = importance_ratio(new_logp, mb.old_log_prob, counter)
    surr, flag = clipped_surrogate(ratio, mb.advantage, cfg.clip_eps)
    ent, dent = approx.entropy_of_logits(logits)

    # d(-mean surr)/dlogits = -(1/n) dsurr/dratio * ratio * (onehot - p)
    coef = -clipped_surrogate_grad(ratio, mb.advantage, cfg.clip_eps) * ratio / n
    dlogits = -probs * coef[:, None]
    dlogits[rows, mb.actions] += coef
    dlogits -= (cfg.ent_coef / n) * dent
    g_actor = approx.backward_cache(actor_spec, actor, a_cache, dlogits)

    values, c_cache = approx.forward_cache(critic_spec, critic, x)
    v = values[:, 0]
    if cfg.value_clip:
        vloss = clipped_value_loss(v, mb.old_value, mb.return_target, cfg.clip_eps)
        dv = clipped_value_loss_grad(v, mb.old_value, mb.return_target, cfg.clip_eps)
    else:
        vloss = (v - mb.return_target) ** 2
        dv = 2.0 * (v - mb.return_target)
    g_critic = approx.backward_cache(critic_spec, critic, c_cache, (cfg.vf_coef / n * dv)[:, None])

    policy_loss = -float(np.mean(surr))
    value_loss = float(np.mean(vloss))
    entropy = float(np.mean(ent))
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
    if not (np.isfinite(loss) and np.all(np.isfinite(g_actor)) and np.all(np.isfinite(g_critic))):
        raise NumericalError("non-finite PPO loss or gradient")
    diag = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(flag)),
        "approx_kl": float(np.mean(mb.old_log_prob - new_logp)),
    }
    return loss, (g_actor, g_critic), diag
