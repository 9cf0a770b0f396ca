"""Proximal policy optimization on explicit tabular models."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import approx, estimators
from ..errors import NumericalError, UsageError
from ..mdp import MdpModel, Rng, one_hot_features
from .batch import StatePolicy, build_batch, collect_parallel, episode_stats
from .losses import ClampCounter, adaptive_lr, clip_gradient, total_ppo_loss
from .pg import TrainResult, make_networks, metric_row


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    ent_coef_final: float | None = None
    epochs: int = 10
    minibatch_size: int = 64
    lr: float = 3e-4
    target_kl: float = 0.01
    max_grad_norm: float = 0.5
    value_clip: bool = True
    adv_norm: bool = True
    obs_norm: bool = False
    obs_norm_strict: bool = False
    batch_size: int = 1024
    max_len: int = 100
    critic_target: str = "lambda"
    optimizer: str = "sgd"
    adaptive: bool = True
    n_envs: int = 1
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise UsageError("gamma and lam must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise UsageError("clip_eps must lie in (0, 1)")
        for name in ("vf_coef", "ent_coef"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                raise UsageError(f"{name} must be finite and >= 0")
        for name in ("lr", "target_kl", "max_grad_norm"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                raise UsageError(f"{name} must be finite and > 0")
        for name in ("epochs", "minibatch_size", "batch_size", "max_len", "n_envs"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.ent_coef_final is not None and not (math.isfinite(self.ent_coef_final) and self.ent_coef_final >= 0):
            raise UsageError("ent_coef_final must be finite and >= 0")
        if self.critic_target not in ("lambda", "td"):
            raise UsageError("critic_target must be 'lambda' or 'td'")
        if self.optimizer not in ("sgd", "adam"):
            raise UsageError("optimizer must be 'sgd' or 'adam'")


def entropy_coef_at(cfg: PpoConfig, it: int, iterations: int) -> float:
    """Linear anneal from ent_coef at the first iteration to ent_coef_final at the last."""
    if cfg.ent_coef_final is None or iterations <= 1:
        return cfg.ent_coef
    frac = (it - 1) / (iterations - 1)
    return cfg.ent_coef + frac * (cfg.ent_coef_final - cfg.ent_coef)


def full_batch_kl(spec: approx.MlpSpec, params: np.ndarray, batch) -> float:
    logp = approx.log_softmax(approx.forward(spec, params, batch.features))
    new = logp[np.arange(len(batch)), batch.actions]
    return float(np.mean(batch.old_log_prob - new))


def ppo_train(
    model: MdpModel,
    cfg: PpoConfig,
    iterations: int,
    rng: Rng,
    on_iteration=None,
) -> TrainResult:
    """Collect, estimate advantages, then run clipped minibatch epochs; one row of metrics per iteration."""
    a_spec, actor, c_spec, critic = make_networks(model, cfg.hidden, rng)
    raw = one_hot_features(model.n_states)
    moments = (
        estimators.RunningMoments.zeros(model.n_states, strict_paper=cfg.obs_norm_strict) if cfg.obs_norm else None
    )
    res = TrainResult(a_spec, actor, c_spec, critic, raw)
    a_opt = approx.Optimizer(cfg.optimizer, a_spec.n_params)
    c_opt = approx.Optimizer(cfg.optimizer, c_spec.n_params)
    env_rngs = [rng.spawn(1000 + k) for k in range(cfg.n_envs)]
    counter = ClampCounter()
    lr = cfg.lr
    for it in range(1, iterations + 1):
        feats = raw if moments is None else estimators.normalize_observation(moments, raw)
        res.feature_table = feats
        sampler = StatePolicy(approx.forward(a_spec, res.actor, feats))
        trajs = collect_parallel(model, sampler, cfg.batch_size, cfg.max_len, env_rngs)
        vt = approx.forward(c_spec, res.critic, feats)[:, 0]
        batch = build_batch(trajs, feats, vt, model.terminal, cfg.gamma, cfg.lam, cfg.critic_target)
        if cfg.adv_norm:
            batch.advantage = estimators.normalize_advantages(batch.advantage)

        step_cfg = replace(cfg, ent_coef=entropy_coef_at(cfg, it, iterations))
        start_actor, start_critic = res.actor, res.critic
        sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0, "grad_norm": 0.0}
        n_updates = 0
        kl = 0.0
        try:
            for _ in range(cfg.epochs):
                order = rng.gen.permutation(len(batch))
                for lo in range(0, len(batch), cfg.minibatch_size):
                    mb = batch.take(order[lo : lo + cfg.minibatch_size])
                    _, (ga, gc), diag = total_ppo_loss(mb, a_spec, res.actor, c_spec, res.critic, step_cfg, counter)
                    sums["grad_norm"] += float(np.linalg.norm(ga))
                    res.actor = a_opt.step(res.actor, clip_gradient(ga, cfg.max_grad_norm), lr)
                    res.critic = c_opt.step(res.critic, clip_gradient(gc, cfg.max_grad_norm), lr)
                    for k in ("policy_loss", "value_loss", "entropy", "clip_fraction"):
                        sums[k] += diag[k]
                    n_updates += 1
                kl = full_batch_kl(a_spec, res.actor, batch)
                if kl > 1.5 * cfg.target_kl:
                    break
        except NumericalError:
            # drop this iteration's update and move on to a fresh rollout
            res.actor, res.critic = start_actor, start_critic
            kl = 0.0
        if moments is not None:
            moments = estimators.update_moments(moments, raw[batch.states])
        row_lr = lr
        if cfg.adaptive:
            lr = adaptive_lr(lr, kl, cfg.target_kl)
        means = {k: v / max(n_updates, 1) for k, v in sums.items()}
        res.history.append(metric_row(it, episode_stats(model, trajs, cfg.max_len), row_lr, approx_kl=kl, **means))
        if on_iteration is not None:
            on_iteration(it, res)
    res.clamped_ratios = counter.clamped
    return res

