"""Self-checks behind ``gpirl check``: gradients against finite differences and exact identities."""
from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .. import approx, dp, estimators
from ..mdp import frozen_lake
from ..policy_opt import losses

GRAD_TOL = 1e-4
EXACT_TOL = 1e-12
NET_SIZES = ((4, (16,), 3), (6, (8, 8), 4), (16, (32, 16), 4))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_net(gen, sizes):
    spec = approx.MlpSpec(sizes[0], sizes[1], sizes[2])
    return spec, approx.init_params(spec, gen)


def random_ppo_batch(gen, spec: approx.MlpSpec, params: np.ndarray, n: int = 12):
    """A small batch with perturbed old log-probs so ratios straddle the clip range."""
    x = gen.normal(size=(n, spec.input_dim))
    actions = gen.integers(0, spec.output_dim, size=n)
    logp = approx.log_softmax(approx.forward(spec, params, x))[np.arange(n), actions]
    return SimpleNamespace(
        features=x,
        actions=actions,
        old_log_prob=logp + gen.normal(scale=0.3, size=n),
        old_value=gen.normal(size=n),
        advantage=gen.normal(size=n),
        return_target=gen.normal(size=n),
    )


def gradient_errors(seed: int = 0) -> dict[str, float]:
    """Worst finite-difference error per loss over the standard network sizes."""
    gen = np.random.default_rng(seed)
    worst = {"log_prob": 0.0, "entropy": 0.0, "value_mse": 0.0, "ppo_loss": 0.0}
    cfg = losses.LossWeights(clip_eps=0.2, vf_coef=0.5, ent_coef=0.01, value_clip=True)
    for sizes in NET_SIZES:
        spec, params = _random_net(gen, sizes)
        x = gen.normal(size=(5, spec.input_dim))
        acts = gen.integers(0, spec.output_dim, size=5)

        def logp_fn(p):
            lp, g = approx.logprob_and_grad(spec, p, x, acts)
            return float(np.sum(lp)), g

        def ent_fn(p):
            h, g = approx.entropy_and_grad(spec, p, x)
            return float(np.sum(h)), g

        vspec, vparams = _random_net(gen, (sizes[0], sizes[1], 1))
        targets = gen.normal(size=5)

        def mse_fn(p):
            return losses.value_loss_and_grad(vspec, p, x, targets)

        batch = random_ppo_batch(gen, spec, params)

        def ppo_actor(p):
            loss, (ga, _), _ = losses.total_ppo_loss(batch, spec, p, vspec, vparams, cfg)
            return loss, ga

        def ppo_critic(p):
            loss, (_, gc), _ = losses.total_ppo_loss(batch, spec, params, vspec, p, cfg)
            return loss, gc

        worst["log_prob"] = max(worst["log_prob"], approx.finite_diff_check(spec, params, logp_fn))
        worst["entropy"] = max(worst["entropy"], approx.finite_diff_check(spec, params, ent_fn))
        worst["value_mse"] = max(worst["value_mse"], approx.finite_diff_check(vspec, vparams, mse_fn))
        worst["ppo_loss"] = max(
            worst["ppo_loss"],
            approx.finite_diff_check(spec, params, ppo_actor),
            approx.finite_diff_check(vspec, vparams, ppo_critic),
        )
    return worst


def gae_identity_error(trials: int = 200, seed: int = 1) -> tuple[float, float]:
    """Max error of (n-step advantage vs discounted TD sum) and (lambda-return vs GAE + V)."""
    gen = np.random.default_rng(seed)
    tel = lam_err = 0.0
    for _ in range(trials):
        T = int(gen.integers(1, 30))
        r = gen.normal(size=T)
        v = gen.normal(size=T + 1)
        gamma, lam = gen.uniform(0.5, 1.0), gen.uniform(0.0, 1.0)
        t = int(gen.integers(0, T))
        n = int(gen.integers(1, T + 2))
        delta = estimators.td_errors(r, v, gamma, terminal=False)
        k = min(n, T - t)
        direct = sum(gamma**l * delta[t + l] for l in range(k))
        tel = max(tel, abs(estimators.n_step_advantage(r, v, gamma, n, t) - direct))
        cfg = estimators.GaeConfig(gamma, lam)
        lr = estimators.lambda_return(r, v, cfg, terminal=False)
        lam_err = max(lam_err, float(np.max(np.abs(lr - estimators.lambda_return_direct(r, v, cfg, terminal=False)))))
    return tel, lam_err


def clip_saturation_error(seed: int = 2) -> float:
    gen = np.random.default_rng(seed)
    worst = 0.0
    eps = 0.2
    for _ in range(500):
        adv = gen.normal()
        if adv == 0:
            continue
        r = 1.0 + eps + gen.uniform(0.01, 2.0) if adv > 0 else 1.0 - eps - gen.uniform(0.01, 0.79)
        h = 1e-6
        lo, _ = losses.clipped_surrogate(r - h, adv, eps)
        hi, _ = losses.clipped_surrogate(r + h, adv, eps)
        worst = max(worst, abs(hi - lo), abs(float(losses.clipped_surrogate_grad(r, adv, eps))))
    return worst


def importance_sampling_error(seed: int = 3) -> float:
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        k = int(gen.integers(2, 8))
        old = gen.dirichlet(np.ones(k))
        new = gen.dirichlet(np.ones(k))
        f = gen.normal(size=k)
        ratio = losses.importance_ratio(np.log(new), np.log(old))
        worst = max(worst, abs(float(np.sum(old * ratio * f)) - float(np.sum(new * f))))
    return worst


def dp_agreement() -> float:
    worst = 0.0
    for slip in (False, True):
        m = frozen_lake(slip)
        cfg = dp.GpiConfig(gamma=0.9)
        v_vi, _ = dp.value_iteration(m, cfg)
        _, v_pi = dp.policy_iteration(m, cfg)
        worst = max(worst, float(np.max(np.abs(v_vi - v_pi))))
    return worst


def run_all() -> list[CheckResult]:
    out = []
    for name, err in gradient_errors().items():
        out.append(CheckResult(f"grad:{name}", err <= GRAD_TOL, f"max rel err {err:.2e}"))
    tel, lam = gae_identity_error()
    out.append(CheckResult("gae:telescoping", tel <= EXACT_TOL, f"max err {tel:.2e}"))
    out.append(CheckResult("gae:lambda-return", lam <= EXACT_TOL, f"max err {lam:.2e}"))
    sat = clip_saturation_error()
    out.append(CheckResult("clip:saturation", sat == 0.0, f"max slope {sat:.2e}"))
    isw = importance_sampling_error()
    out.append(CheckResult("importance-sampling", isw <= 1e-10, f"max err {isw:.2e}"))
    gnorm = float(np.linalg.norm(losses.clip_gradient(np.array([6.0, 8.0]), 5.0)))
    out.append(CheckResult("grad-clip", abs(gnorm - 5.0) <= EXACT_TOL, f"norm {gnorm!r}"))
    z = estimators.normalize_advantages([1.0, 2.0, 3.0], eps=0.0)
    ok = np.allclose(z, [-1.224745, 0.0, 1.224745], atol=1e-6)
    out.append(CheckResult("adv-normalization", bool(ok), np.array2string(z, precision=6)))
    vl = losses.clipped_value_loss(1.0, 0.0, 1.0, 0.2)
    out.append(CheckResult("value-clip", abs(vl - 0.64) <= EXACT_TOL, f"loss {vl!r}"))
    dpe = dp_agreement()
    out.append(CheckResult("dp:vi-vs-pi", dpe <= 1e-9, f"max diff {dpe:.2e}"))
    return out
