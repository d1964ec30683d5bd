"""Dense MLP substrate with hand-written backpropagation.

Everything is float64 numpy. Inputs may be a single vector ``(in,)`` or a
batch ``(B, in)``; parameter gradients are summed over the batch, so callers
fold any per-row weighting into ``output_grad``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
NORM_EPS = 1e-8


class ConfigurationError(ValueError):
    """Inconsistent shapes or settings."""


class UsageError(RuntimeError):
    """API called out of order (e.g. backward with a stale cache)."""


class NonFiniteError(FloatingPointError):
    """NaN/Inf encountered in a gradient or loss."""


def elu(x):
    x = np.asarray(x, dtype=np.float64)
    # expm1(min(x, 0)) >= x whenever x <= 0, so the max picks the right branch everywhere
    if x.ndim == 0:
        return np.maximum(x, np.expm1(np.minimum(x, 0.0)))
    out = np.minimum(x, 0.0)
    np.expm1(out, out=out)
    return np.maximum(x, out, out=out)


def elu_grad(x, out=None):
    """Derivative of elu at ``x``; ``out = elu(x)`` lets it skip the exponential."""
    if out is not None:
        return np.minimum(out, 0.0) + 1.0
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "elu"
    normalize_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError(f"all MLP dimensions must be >= 1, got {dims}")
        if self.activation not in ("elu", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class NetworkParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    log_std: np.ndarray | None = None
    version: int = 0

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        if self.log_std is not None:
            out.append(self.log_std)
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [(w.copy(), b.copy()) for w, b in self.layers],
            None if self.log_std is None else self.log_std.copy(),
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers],
            None if self.log_std is None else np.zeros_like(self.log_std),
        )

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def check_spec(self, spec: MlpSpec) -> None:
        dims = spec.dims
        if len(self.layers) != len(dims) - 1:
            raise ConfigurationError(f"expected {len(dims) - 1} layers, got {len(self.layers)}")
        for i, (w, b) in enumerate(self.layers):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ConfigurationError(
                    f"layer {i}: shapes {w.shape}/{b.shape} do not match {dims[i + 1]}x{dims[i]}"
                )


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(
    spec: MlpSpec,
    rng: np.random.Generator,
    output_gain: float = 1.0,
    log_std_dim: int | None = None,
    init_std: float = 1.0,
) -> NetworkParams:
    """Orthogonal weights (gain sqrt(2) on hidden layers), zero biases."""
    dims = spec.dims
    layers = []
    for i in range(len(dims) - 1):
        gain = output_gain if i == len(dims) - 2 else math.sqrt(2.0)
        layers.append((_orthogonal(rng, dims[i + 1], dims[i], gain), np.zeros(dims[i + 1])))
    log_std = None
    if log_std_dim is not None:
        log_std = np.full(log_std_dim, math.log(init_std))
    return NetworkParams(layers, log_std)


@dataclass
class ForwardCache:
    params: NetworkParams
    spec: MlpSpec
    version: int
    squeeze: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    u: np.ndarray | None = None
    norm: np.ndarray | None = None
    z: np.ndarray | None = None


def l2_normalize(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise unit normalisation; degenerate rows map to the first basis vector."""
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    safe = np.where(norm < NORM_EPS, 1.0, norm)
    z = u / safe
    degenerate = (norm < NORM_EPS)[..., 0]
    if np.any(degenerate):
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
    return z, norm


def mlp_forward(params: NetworkParams, spec: MlpSpec, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ConfigurationError(f"input has shape {x.shape}, expected (*, {spec.input_dim})")
    params.check_spec(spec)
    cache = ForwardCache(params, spec, params.version, squeeze)
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        cache.inputs.append(h)
        a = h @ w.T + b
        cache.preacts.append(a)
        h = elu(a) if i < last and spec.activation == "elu" else a
    if spec.normalize_output:
        cache.u = h
        h, cache.norm = l2_normalize(h)
        cache.z = h
    return (h[0] if squeeze else h), cache


def mlp_backward(cache: ForwardCache, output_grad) -> tuple[NetworkParams, np.ndarray]:
    """Gradients of <output_grad, output> w.r.t. parameters and input."""
    if cache is None or not cache.inputs:
        raise UsageError("mlp_backward needs a cache produced by mlp_forward")
    if cache.version != cache.params.version:
        raise UsageError("stale forward cache: parameters were updated after the forward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    spec = cache.spec
    if g.shape != (cache.inputs[0].shape[0], spec.output_dim):
        raise ConfigurationError(f"output_grad shape {g.shape} does not match output")
    if spec.normalize_output:
        z, norm = cache.z, cache.norm
        degenerate = norm < NORM_EPS
        safe = np.where(degenerate, 1.0, norm)
        g = (g - z * np.sum(z * g, axis=1, keepdims=True)) / safe
        g = np.where(degenerate, 0.0, g)
    grads = []
    last = len(cache.params.layers) - 1
    for i in range(last, -1, -1):
        w, _ = cache.params.layers[i]
        if i < last and spec.activation == "elu":
            g = g * elu_grad(cache.preacts[i], cache.inputs[i + 1])
        grads.append((g.T @ cache.inputs[i], g.sum(axis=0)))
        g = g @ w
    grads.reverse()
    log_std = None if cache.params.log_std is None else np.zeros_like(cache.params.log_std)
    input_grad = g[0] if cache.squeeze else g
    return NetworkParams(grads, log_std), input_grad


class DiagGaussian:
    """Diagonal Gaussian with state-independent log-std."""

    def __init__(self, mean, log_std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.log_std = np.broadcast_to(np.asarray(log_std, dtype=np.float64), self.mean.shape)
        self.std = np.exp(self.log_std)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def log_prob(self, a) -> np.ndarray:
        d = (np.asarray(a, dtype=np.float64) - self.mean) / self.std
        return np.sum(-0.5 * d * d - self.log_std - 0.5 * LOG_2PI, axis=-1)

    def entropy(self) -> np.ndarray:
        return np.sum(0.5 + 0.5 * LOG_2PI + self.log_std, axis=-1)

    def kl_to(self, other: "DiagGaussian") -> np.ndarray:
        """KL(self || other), summed over action dimensions."""
        var_ratio = (self.std / other.std) ** 2
        diff = (self.mean - other.mean) / other.std
        return np.sum(other.log_std - self.log_std + 0.5 * (var_ratio + diff * diff) - 0.5, axis=-1)

    def log_prob_grads(self, a) -> tuple[np.ndarray, np.ndarray]:
        """d log_prob / d mean and d log_prob / d log_std, per row."""
        d = (np.asarray(a, dtype=np.float64) - self.mean) / self.std
        return d / self.std, d * d - 1.0


def gaussian_policy(mean, log_std) -> DiagGaussian:
    return DiagGaussian(mean, log_std)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **kw) -> "AdamState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], **kw)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState, lr: float,
              name: str = "network") -> None:
    """Bias-corrected Adam update, in place."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    p_arrs, g_arrs = params.arrays(), grads.arrays()
    if len(p_arrs) != len(g_arrs) or len(p_arrs) != len(state.first_moment):
        raise ConfigurationError(f"{name}: gradient/parameter structure mismatch")
    for i, g in enumerate(g_arrs):
        if g.shape != p_arrs[i].shape:
            raise ConfigurationError(f"{name}: gradient {i} has shape {g.shape}, expected {p_arrs[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name} (array {i})")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(p_arrs, g_arrs, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    params.version += 1


def grad_norm(grads: Sequence[NetworkParams]) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for g in grads for a in g.arrays()))


def clip_grad_norm(grads: NetworkParams, max_norm: float | None) -> float:
    """Scale ``grads`` in place to global norm ``max_norm``; returns the pre-clip norm."""
    norm = grad_norm([grads])
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in grads.arrays():
            a *= scale
    return norm


def add_grads(a: NetworkParams, b: NetworkParams) -> NetworkParams:
    """Accumulate ``b`` into ``a`` in place."""
    for x, y in zip(a.arrays(), b.arrays()):
        x += y
    return a
