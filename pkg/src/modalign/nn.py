"""Minimal dense-network core with explicit per-layer backward passes.

All tensors are 2-d float64 numpy arrays, row = sample, col = feature.
There is no autodiff tape: each layer caches what its backward needs and
networks run their layers' backwards in reverse order. Stochastic layers
(dropout) take an explicit rng; nothing touches global random state.

Setting MINT_NUMERICS_CHECKS=1 enables post-layer finiteness assertions.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class FrozenParameterError(RuntimeError):
    """Raised on any mutation attempt against frozen parameters."""


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient turns non-finite during training."""


def numerics_checks_enabled() -> bool:
    return os.environ.get("MINT_NUMERICS_CHECKS", "") == "1"


def assert_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {where}")


def _check(x: np.ndarray, where: str) -> np.ndarray:
    if numerics_checks_enabled():
        assert_finite(x, where)
    return x


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a 2-d float64 array (n samples x d features)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d (rows x cols), got shape {arr.shape}")
    return arr


class Param:
    """Named trainable array with a gradient slot filled by backward()."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def freeze_params(params: list[Param]) -> None:
    """Make parameter arrays read-only; writes raise afterwards."""
    for p in params:
        p.value.flags.writeable = False


def params_frozen(params: list[Param]) -> bool:
    return all(not p.value.flags.writeable for p in params)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Dense:
    """Affine map x @ W + b with W (in_dim, out_dim), b (out_dim,)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 name: str = "dense", zero_init: bool = False):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"invalid dense dims ({in_dim}, {out_dim})")
        if zero_init:
            w = np.zeros((in_dim, out_dim))
            b = np.zeros(out_dim)
        else:
            if rng is None:
                raise ValueError("rng required for non-zero initialization")
            # fan-in scaled uniform, same bound for weights and bias
            bound = 1.0 / np.sqrt(in_dim)
            w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
            b = rng.uniform(-bound, bound, size=out_dim)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.w.name}: input has {x.shape[1]} cols, layer expects {self.in_dim}")
        self._x = x
        return _check(x @ self.w.value + self.b.value, self.w.name)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._x
        self.w.grad = x.T @ dout
        self.b.grad = dout.sum(axis=0)
        return dout @ self.w.value.T

    def parameters(self) -> list[Param]:
        return [self.w, self.b]


def dense_forward(x: np.ndarray, layer: Dense) -> np.ndarray:
    """Stateless affine forward; rejects dimension mismatches."""
    return layer.forward(x, mode="eval")


class Gelu:
    """Exact GELU x * Phi(x) via the normal CDF (no tanh approximation)."""

    def __init__(self):
        self._x: np.ndarray | None = None

    @staticmethod
    def cdf(x: np.ndarray) -> np.ndarray:
        return 0.5 * (1.0 + erf(x / SQRT2))

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        self._x = x
        return _check(x * self.cdf(x), "gelu")

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._x
        pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return dout * (self.cdf(x) + x * pdf)

    def parameters(self) -> list[Param]:
        return []


def gelu(x: np.ndarray) -> np.ndarray:
    x = as_matrix(x)
    return x * Gelu.cdf(x)


class Dropout:
    """Inverted dropout: zero with probability rate, scale survivors 1/(1-rate)."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._scale: np.ndarray | float = 1.0

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        if mode == "eval" or self.rate == 0.0:
            self._scale = 1.0
            return x
        if rng is None:
            raise ValueError("dropout in train mode requires an rng")
        keep = rng.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._scale

    def parameters(self) -> list[Param]:
        return []


def dropout(x: np.ndarray, rate: float, mode: str,
            rng: np.random.Generator | None = None) -> np.ndarray:
    return Dropout(rate).forward(as_matrix(x), mode=mode, rng=rng)


class BatchNorm:
    """Batch normalization over features with affine gamma/beta.

    Train mode normalizes by biased batch statistics and folds the unbiased
    batch variance into the running estimates; eval mode normalizes by the
    running statistics. `update_running` can be cleared to keep state fixed
    (gradient checks).
    """

    def __init__(self, dim: int, momentum: float = 0.1, epsilon: float = 1e-5,
                 name: str = "bn"):
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.update_running = True
        self._cache = None

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        x = as_matrix(x)
        if x.shape[1] != self.dim:
            raise ValueError(f"batchnorm expects {self.dim} cols, got {x.shape[1]}")
        if mode == "train":
            n = x.shape[0]
            if n < 2:
                raise ValueError("batchnorm train mode needs at least 2 rows")
            mean = x.mean(axis=0)
            var = x.var(axis=0)  # biased, used for normalization
            inv_std = 1.0 / np.sqrt(var + self.epsilon)
            xhat = (x - mean) * inv_std
            if self.update_running:
                unbiased = var * n / (n - 1)
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.epsilon)
            xhat = (x - self.running_mean) * inv_std
        self._cache = (xhat, inv_std, mode)
        return _check(xhat * self.gamma.value + self.beta.value, self.gamma.name)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv_std, mode = self._cache
        self.gamma.grad = (dout * xhat).sum(axis=0)
        self.beta.grad = dout.sum(axis=0)
        dxhat = dout * self.gamma.value
        if mode == "eval":
            return dxhat * inv_std
        n = xhat.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )

    def state_dict(self) -> dict:
        return {
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "momentum": self.momentum,
            "epsilon": self.epsilon,
        }

    def load_state(self, state: dict) -> None:
        self.running_mean = np.asarray(state["running_mean"], dtype=np.float64)
        self.running_var = np.asarray(state["running_var"], dtype=np.float64)
        if np.any(self.running_var <= 0):
            raise ValueError("running_var must be strictly positive")
        self.momentum = float(state["momentum"])
        self.epsilon = float(state["epsilon"])

    def parameters(self) -> list[Param]:
        return [self.gamma, self.beta]


def batchnorm(x: np.ndarray, state: BatchNorm, mode: str) -> np.ndarray:
    return state.forward(as_matrix(x), mode=mode)


class Sequential:
    """Composes layers; backward replays them in reverse order."""

    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, mode=mode, rng=rng)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def parameters(self) -> list[Param]:
        out: list[Param] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def make_mlp(dims: list[int], rng: np.random.Generator, name: str = "mlp",
             dropout_rate: float = 0.0) -> Sequential:
    """Dense stack with GELU (and optional dropout) between layers, linear output."""
    if len(dims) < 2:
        raise ValueError("mlp needs at least input and output dims")
    layers: list = []
    for i, (din, dout_) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Dense(din, dout_, rng=rng, name=f"{name}.fc{i}"))
        if i < len(dims) - 2:
            layers.append(Gelu())
            if dropout_rate > 0.0:
                layers.append(Dropout(dropout_rate))
    return Sequential(layers)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization."""
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _validate_targets(targets: np.ndarray) -> np.ndarray:
    targets = as_matrix(targets, "targets")
    if np.any(targets < 0):
        raise ValueError("target rows must be non-negative")
    sums = targets.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
    if bad.size:
        raise ValueError(f"target row {bad[0]} does not sum to 1 (sum={sums[bad[0]]!r})")
    return targets


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                       sample_weights: np.ndarray | None = None) -> float:
    """Weighted mean over rows of -sum_c q_c log softmax(logits)_c."""
    loss, _ = soft_cross_entropy_with_grad(logits, targets, sample_weights)
    return loss


def soft_cross_entropy_with_grad(
        logits: np.ndarray, targets: np.ndarray,
        sample_weights: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Returns (loss, dloss/dlogits) for the weighted soft cross-entropy."""
    logits = as_matrix(logits, "logits")
    targets = _validate_targets(targets)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} vs targets {targets.shape} mismatch")
    n = logits.shape[0]
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise ValueError("sample_weights length must match rows")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("sample weights must have positive total")
    logp = log_softmax(logits)
    per_row = -(targets * logp).sum(axis=1)
    loss = float((w * per_row).sum() / wsum)
    dlogits = (softmax(logits) - targets) * (w / wsum)[:, None]
    return loss, dlogits


def one_hot(label_indices: np.ndarray, num_classes: int = 2) -> np.ndarray:
    idx = np.asarray(label_indices, dtype=int)
    out = np.zeros((idx.shape[0], num_classes))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out
