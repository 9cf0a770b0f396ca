"""Vanilla policy gradient (REINFORCE) and one-step actor-critic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import approx, estimators
from ..errors import NumericalError, UsageError
from ..mdp import MdpModel, Rng, one_hot_features
from .batch import RolloutBatch, StatePolicy, build_batch, collect_episodes, collect_steps, episode_stats
from .losses import value_loss_and_grad

VARIANTS = ("total-return", "reward-to-go", "baseline")

METRIC_COLUMNS = (
    "iteration", "episodes", "mean_return", "success_rate", "policy_loss", "value_loss",
    "entropy", "approx_kl", "clip_fraction", "lr", "grad_norm",
)


def policy_gradient(spec: approx.MlpSpec, params: np.ndarray, features, actions, weights, scale: float):
    """scale * sum_i W_i grad log pi(a_i|s_i), plus the surrogate value and mean entropy."""
    actions = np.asarray(actions, dtype=int)
    w = np.asarray(weights, dtype=float)
    logits, cache = approx.forward_cache(spec, params, features)
    logp_all = approx.log_softmax(logits)
    rows = np.arange(len(actions))
    dlogits = -np.exp(logp_all) * w[:, None]
    dlogits[rows, actions] += w
    grad = scale * approx.backward_cache(spec, params, cache, dlogits)
    surrogate = scale * float(np.sum(logp_all[rows, actions] * w))
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite policy gradient")
    entropy = float(np.mean(approx.entropy_of_logits(logits)[0]))
    return grad, surrogate, entropy


def reinforce_weights(batch: RolloutBatch, gamma: float, variant: str) -> np.ndarray:
    """Per-step weight W_t: whole-episode return, reward-to-go, or reward-to-go minus V(s_t).

    Truncated episodes bootstrap the tail from ``next_value`` (zero without a critic).
    """
    if variant not in VARIANTS:
        raise UsageError(f"variant must be one of {VARIANTS}")
    w = np.empty(len(batch))
    for lo, hi in batch.bounds:
        boot = batch.next_value[hi - 1] if batch.truncated[hi - 1] else 0.0
        g = estimators.discounted_returns(batch.rewards[lo:hi], gamma, bootstrap=boot)
        if variant == "total-return":
            w[lo:hi] = g[0]
        elif variant == "reward-to-go":
            w[lo:hi] = g
        else:
            w[lo:hi] = g - batch.old_value[lo:hi]
    return w


def reinforce_update(
    batch: RolloutBatch, spec: approx.MlpSpec, params: np.ndarray, lr: float, variant: str, gamma: float
) -> tuple[np.ndarray, dict]:
    """One ascent step on (1/|D|) sum over episodes and steps of grad log pi * W_t."""
    if not batch.bounds:
        raise UsageError("REINFORCE needs whole episodes in the batch")
    w = reinforce_weights(batch, gamma, variant)
    grad, surrogate, entropy = policy_gradient(spec, params, batch.features, batch.actions, w, 1.0 / len(batch.bounds))
    new = approx.sgd_step(params, grad, lr, maximize=True)
    return new, {"grad_norm": float(np.linalg.norm(grad)), "policy_loss": -surrogate, "entropy": entropy}


def actor_critic_update(
    batch: RolloutBatch,
    actor_spec: approx.MlpSpec,
    actor: np.ndarray,
    critic_spec: approx.MlpSpec,
    critic: np.ndarray,
    cfg: "ActorCriticConfig",
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Actor ascent weighted by the TD error; critic regression on fixed one-step targets.

    ``batch.old_value`` and ``batch.next_value`` must come from ``critic``.
    """
    target = batch.rewards + cfg.gamma * batch.next_value
    delta = target - batch.old_value
    grad, surrogate, entropy = policy_gradient(actor_spec, actor, batch.features, batch.actions, delta, 1.0 / len(batch))
    new_actor = approx.sgd_step(actor, grad, cfg.actor_lr, maximize=True)
    new_critic = critic
    vloss = 0.0
    for _ in range(cfg.critic_steps):
        vloss, vgrad = value_loss_and_grad(critic_spec, new_critic, batch.features, target)
        if not np.all(np.isfinite(vgrad)):
            raise NumericalError("non-finite critic gradient")
        new_critic = approx.sgd_step(new_critic, vgrad, cfg.critic_lr)
    diag = {"grad_norm": float(np.linalg.norm(grad)), "policy_loss": -surrogate, "value_loss": vloss, "entropy": entropy}
    return new_actor, new_critic, diag


@dataclass
class TrainResult:
    actor_spec: approx.MlpSpec
    actor: np.ndarray
    critic_spec: approx.MlpSpec | None
    critic: np.ndarray | None
    feature_table: np.ndarray
    history: list[dict] = field(default_factory=list)
    clamped_ratios: int = 0

    def policy_probs(self) -> np.ndarray:
        return approx.softmax(approx.forward(self.actor_spec, self.actor, self.feature_table))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.policy_probs(), axis=1)


def make_networks(model: MdpModel, hidden: tuple[int, ...], rng: Rng, critic: bool = True):
    a_spec = approx.MlpSpec(model.n_states, hidden, model.n_actions)
    actor = approx.init_params(a_spec, rng.gen)
    if not critic:
        return a_spec, actor, None, None
    c_spec = approx.MlpSpec(model.n_states, hidden, 1)
    return a_spec, actor, c_spec, approx.init_params(c_spec, rng.gen)


def metric_row(it: int, stats, lr: float, **vals) -> dict:
    row = {k: 0.0 for k in METRIC_COLUMNS}
    row.update(iteration=it, episodes=stats.episodes, mean_return=stats.mean_return, success_rate=stats.success_rate, lr=lr)
    row.update(vals)
    return row


@dataclass(frozen=True)
class ReinforceConfig:
    gamma: float = 0.99
    lr: float = 0.1
    episodes_per_batch: int = 32
    variant: str = "reward-to-go"
    max_len: int = 100
    hidden: tuple[int, ...] = (64, 64)
    critic_lr: float = 0.05
    critic_steps: int = 5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}")
        if self.lr <= 0 or self.episodes_per_batch < 1 or self.max_len < 1:
            raise UsageError("lr, episodes_per_batch and max_len must be positive")


def reinforce_train(model: MdpModel, cfg: ReinforceConfig, iterations: int, rng: Rng, on_iteration=None) -> TrainResult:
    use_critic = cfg.variant == "baseline"
    a_spec, actor, c_spec, critic = make_networks(model, cfg.hidden, rng, critic=use_critic)
    feats = one_hot_features(model.n_states)
    res = TrainResult(a_spec, actor, c_spec, critic, feats)
    for it in range(1, iterations + 1):
        sampler = StatePolicy(approx.forward(a_spec, res.actor, feats))
        trajs = collect_episodes(model, sampler, cfg.episodes_per_batch, cfg.max_len, rng)
        vt = approx.forward(c_spec, res.critic, feats)[:, 0] if use_critic else None
        batch = build_batch(trajs, feats, vt, model.terminal, cfg.gamma, 1.0)
        res.actor, diag = reinforce_update(batch, a_spec, res.actor, cfg.lr, cfg.variant, cfg.gamma)
        vloss = 0.0
        if use_critic:
            # the baseline regresses on the same bootstrapped returns the actor used
            returns = reinforce_weights(batch, cfg.gamma, "reward-to-go")
            for _ in range(cfg.critic_steps):
                vloss, g = value_loss_and_grad(c_spec, res.critic, batch.features, returns)
                res.critic = approx.sgd_step(res.critic, g, cfg.critic_lr)
        row = metric_row(it, episode_stats(model, trajs, cfg.max_len), cfg.lr, value_loss=vloss, **diag)
        res.history.append(row)
        if on_iteration is not None:
            on_iteration(it, res)
    return res


@dataclass(frozen=True)
class ActorCriticConfig:
    gamma: float = 0.99
    actor_lr: float = 0.5
    critic_lr: float = 0.2
    critic_steps: int = 5
    batch_size: int = 512
    max_len: int = 100
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise UsageError("gamma must lie in [0, 1]")
        if self.actor_lr <= 0 or self.critic_lr <= 0 or self.critic_steps < 1:
            raise UsageError("actor-critic learning rates must be > 0 and critic_steps >= 1")
        if self.batch_size < 1 or self.max_len < 1:
            raise UsageError("batch_size and max_len must be >= 1")


def actor_critic_train(model: MdpModel, cfg: ActorCriticConfig, iterations: int, rng: Rng, on_iteration=None) -> TrainResult:
    a_spec, actor, c_spec, critic = make_networks(model, cfg.hidden, rng)
    feats = one_hot_features(model.n_states)
    res = TrainResult(a_spec, actor, c_spec, critic, feats)
    for it in range(1, iterations + 1):
        sampler = StatePolicy(approx.forward(a_spec, res.actor, feats))
        trajs = collect_steps(model, sampler, cfg.batch_size, cfg.max_len, rng)
        vt = approx.forward(c_spec, res.critic, feats)[:, 0]
        batch = build_batch(trajs, feats, vt, model.terminal, cfg.gamma, 0.0, critic_target="td")
        res.actor, res.critic, diag = actor_critic_update(batch, a_spec, res.actor, c_spec, res.critic, cfg)
        row = metric_row(it, episode_stats(model, trajs, cfg.max_len), cfg.actor_lr, **diag)
        res.history.append(row)
        if on_iteration is not None:
            on_iteration(it, res)
    return res
