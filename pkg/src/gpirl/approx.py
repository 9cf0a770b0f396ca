"""A small fully-connected tanh network with hand-written reverse mode.

Parameters live in one flat float64 vector; ``MlpSpec.layout`` describes how
it splits into per-layer weight matrices (out x in) and bias vectors. All
functions accept a single input vector or a batch (rows); batched gradients
are summed over rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise UsageError("all layer sizes must be >= 1")
        if self.activation != "tanh":
            raise UsageError("only tanh activations are supported")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            out.append((f"W{k}", (fan_out, fan_in)))
            out.append((f"b{k}", (fan_out,)))
        return out

    @property
    def n_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layout)

    def descriptor(self) -> str:
        return "-".join(str(n) for n in self.sizes) + ":" + self.activation

    @classmethod
    def from_descriptor(cls, text: str) -> "MlpSpec":
        dims, _, act = text.partition(":")
        sizes = [int(x) for x in dims.split("-")]
        if len(sizes) < 2:
            raise UsageError(f"bad network descriptor {text!r}")
        return cls(sizes[0], tuple(sizes[1:-1]), sizes[-1], act or "tanh")


def unpack(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (W, b) per layer into the flat vector."""
    params = np.asarray(params)
    if params.shape != (spec.n_params,):
        raise UsageError(f"expected {spec.n_params} parameters, got {params.shape}")
    layers = []
    pos = 0
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        W = params[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = params[pos : pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def init_params(spec: MlpSpec, gen: np.random.Generator, out_scale: float = 1.0) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.

    ``out_scale`` shrinks the final layer (a small value starts a policy near uniform).
    """
    params = np.empty(spec.n_params)
    layers = unpack(spec, params)
    for k, (W, b) in enumerate(layers):
        bound = 1.0 / math.sqrt(W.shape[1])
        scale = out_scale if k == len(layers) - 1 else 1.0
        W[...] = gen.uniform(-bound, bound, W.shape) * scale
        b[...] = gen.uniform(-bound, bound, b.shape) * scale
    return params


def _as_batch(spec: MlpSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise UsageError(f"input has shape {x.shape}, network expects {spec.input_dim} features")
    return x, single


def forward_cache(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass; returns outputs and the layer inputs needed by backward."""
    layers = unpack(spec, params)
    acts = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = np.tanh(z) if k < len(layers) - 1 else z
        acts.append(h)
    return h, acts


def backward_cache(spec: MlpSpec, params: np.ndarray, acts: list[np.ndarray], out_grad: np.ndarray) -> np.ndarray:
    layers = unpack(spec, params)
    grad = np.empty(spec.n_params)
    glayers = unpack(spec, grad)
    delta = out_grad
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        gW, gb = glayers[k]
        gW[...] = delta.T @ acts[k]
        gb[...] = delta.sum(axis=0)
        if k > 0:
            # acts[k] is tanh(z_{k-1}); d tanh = 1 - tanh^2
            delta = (delta @ W) * (1.0 - acts[k] ** 2)
    return grad


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    xb, single = _as_batch(spec, x)
    out, _ = forward_cache(spec, params, xb)
    return out[0] if single else out


def backward(spec: MlpSpec, params: np.ndarray, x, output_grad) -> np.ndarray:
    """Gradient of <forward(x), output_grad> with respect to the parameters."""
    xb, single = _as_batch(spec, x)
    g = np.asarray(output_grad, dtype=float)
    if single:
        g = g[None, :]
    if g.shape != (xb.shape[0], spec.output_dim):
        raise UsageError(f"output_grad has shape {g.shape}, expected {(xb.shape[0], spec.output_dim)}")
    _, acts = forward_cache(spec, params, xb)
    return backward_cache(spec, params, acts, g)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_policy(spec: MlpSpec, params: np.ndarray, state_features) -> np.ndarray:
    return softmax(forward(spec, params, state_features))


def logprob_and_grad(spec: MlpSpec, params: np.ndarray, state_features, action) -> tuple:
    """log pi(a|s) and its parameter gradient (summed over a batch)."""
    xb, single = _as_batch(spec, state_features)
    acts_idx = np.atleast_1d(np.asarray(action, dtype=int))
    logits, cache = forward_cache(spec, params, xb)
    if (acts_idx < 0).any() or (acts_idx >= spec.output_dim).any():
        raise UsageError("action index out of range")
    logp_all = log_softmax(logits)
    rows = np.arange(len(xb))
    logp = logp_all[rows, acts_idx]
    dlogits = -np.exp(logp_all)
    dlogits[rows, acts_idx] += 1.0
    grad = backward_cache(spec, params, cache, dlogits)
    return (float(logp[0]) if single else logp), grad


def entropy_of_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row entropy and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    H = -(p * logp).sum(axis=-1)
    dH = -p * (logp + H[..., None])
    return H, dH


def entropy_and_grad(spec: MlpSpec, params: np.ndarray, state_features) -> tuple:
    xb, single = _as_batch(spec, state_features)
    logits, cache = forward_cache(spec, params, xb)
    H, dH = entropy_of_logits(logits)
    grad = backward_cache(spec, params, cache, dH)
    return (float(H[0]) if single else H), grad


def finite_diff_check(
    spec: MlpSpec | None,
    params: np.ndarray,
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    h: float = 1e-5,
) -> float:
    """Worst relative error between fn's analytic gradient and central differences.

    ``fn(params)`` returns ``(value, gradient)``. The relative error per
    coordinate uses the denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = np.array(params, dtype=float)
    if spec is not None and params.shape != (spec.n_params,):
        raise UsageError("parameter vector does not match the network spec")
    _, analytic = fn(params)
    analytic = np.asarray(analytic, dtype=float)
    worst = 0.0
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + h
        f_plus, _ = fn(params)
        params[i] = orig - h
        f_minus, _ = fn(params)
        params[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float, maximize: bool = False) -> np.ndarray:
    if lr <= 0:
        raise UsageError("learning rate must be > 0")
    return params + lr * grad if maximize else params - lr * grad


class Adam:
    """Adaptive-moment optimizer; off by default, selectable from run configs."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Optimizer:
    """Descent on a minimized loss: plain SGD or Adam."""

    def __init__(self, kind: str, n_params: int):
        if kind not in ("sgd", "adam"):
            raise UsageError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self._adam = Adam(n_params) if kind == "adam" else None

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        if self._adam is not None:
            return self._adam.step(params, grad, lr)
        return sgd_step(params, grad, lr)


def save_checkpoint(spec: MlpSpec, params: np.ndarray) -> str:
    lines = [f"CKPT v1 {spec.descriptor()} {spec.n_params}"]
    lines.extend(repr(float(x)) for x in params)
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str) -> tuple[MlpSpec, np.ndarray]:
    lines = text.strip().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[:2] != ["CKPT", "v1"]:
        raise UsageError("not a 'CKPT v1' checkpoint")
    spec = MlpSpec.from_descriptor(head[2])
    count = int(head[3])
    values = np.array([float(x) for x in lines[1:]])
    if count != spec.n_params or len(values) != count:
        raise UsageError(f"checkpoint declares {count} params, spec needs {spec.n_params}, found {len(values)}")
    return spec, values
