"""Deterministic model core: SplitMix64 PRNG and a ReLU MLP with softmax cross-entropy.

Parameter layout (the flattening order every executor relies on): layer by
layer, the weight matrix of shape ``(fan_out, fan_in)`` in row-major order,
followed by that layer's bias vector.

All reductions over a batch are carried out strictly in batch index order, so
``gradient`` and ``loss`` are bitwise reproducible for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def rng_next(state: int) -> Tuple[int, int]:
    """Return ``(output, next_state)`` for a SplitMix64 state. Pure."""
    state = (state + GOLDEN_GAMMA) & MASK64
    return _mix(state), state


class Rng:
    """SplitMix64 generator.

    The generator is counter based (output k depends only on ``seed + k*gamma``),
    which lets the block methods produce exactly the same stream as repeated
    ``next_u64`` calls while running vectorised.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        out, self.state = rng_next(self.state)
        return out

    def u64_block(self, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        return (self.u64_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """Standard normal draws by Box-Muller, two uniforms per pair."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def below(self, bound: int) -> int:
        """Integer in [0, bound) by modulo reduction (bias < bound / 2**64)."""
        return self.next_u64() % bound


@dataclass(frozen=True)
class MlpModel:
    layer_sizes: Tuple[int, ...]
    activation: str = "relu"
    n_params: int = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must hold >= 2 positive ints, got {self.layer_sizes!r}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(
            self, "n_params", sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        )

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def unpack(self, w: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Views ``[(W_0, b_0), (W_1, b_1), ...]`` into the flat vector ``w``."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_params,):
            raise ValueError(f"parameter vector has shape {w.shape}, expected ({self.n_params},)")
        layers = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = w[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
            offset += fan_in * fan_out
            b = w[offset:offset + fan_out]
            offset += fan_out
            layers.append((W, b))
        return layers


def init_params(model: MlpModel, rng: Rng, scale: float) -> np.ndarray:
    """Weights uniform in [-scale, scale] drawn in layout order; biases zero."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    w = np.zeros(model.n_params)
    offset = 0
    for fan_in, fan_out in zip(model.layer_sizes[:-1], model.layer_sizes[1:]):
        k = fan_in * fan_out
        w[offset:offset + k] = (2.0 * rng.uniforms(k) - 1.0) * scale
        offset += k + fan_out
    return w


def _check_batch(model: MlpModel, x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a nonempty 2-D feature array")
    if x.shape[1] != model.n_features:
        raise ValueError(f"batch has {x.shape[1]} features, model expects {model.n_features}")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must be a 1-D array matching the batch size")
    if y.size and (y.min() < 0 or y.max() >= model.n_classes):
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    return x, y.astype(np.intp)


def _ordered_sum(per_sample: np.ndarray) -> np.ndarray:
    # cumsum accumulates strictly left to right along axis 0 (np.sum is pairwise).
    return np.cumsum(per_sample, axis=0)[-1]


def _forward(layers, x):
    activations = [x]
    pre = []
    a = x
    for k, (W, b) in enumerate(layers):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < len(layers) - 1 else z
        activations.append(a)
    return pre, activations


def _sample_losses(logits: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    losses = np.log(denom[:, 0]) - shifted[np.arange(len(y)), y]
    return losses, probs


def loss(model: MlpModel, w: np.ndarray, x, y) -> float:
    """Mean softmax cross-entropy of the batch ``(x, y)`` at parameters ``w``."""
    x, y = _check_batch(model, x, y)
    pre, _ = _forward(model.unpack(w), x)
    losses, _ = _sample_losses(pre[-1], y)
    return float(_ordered_sum(losses) / len(y))


def loss_and_gradient(model: MlpModel, w: np.ndarray, x, y) -> Tuple[float, np.ndarray]:
    """Batch loss and ``(1/|batch|) * sum_x dl(w, x)/dw`` by backpropagation.

    The accumulator starts from +0.0 and adds per-sample contributions in batch
    order, then divides by the batch size.
    """
    x, y = _check_batch(model, x, y)
    layers = model.unpack(w)
    pre, acts = _forward(layers, x)
    losses, probs = _sample_losses(pre[-1], y)
    n = len(y)

    delta = probs
    delta[np.arange(n), y] -= 1.0
    grads: List[np.ndarray] = [None] * (2 * len(layers))
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a_prev = acts[k]
        grads[2 * k] = _ordered_sum(delta[:, :, None] * a_prev[:, None, :]).ravel()
        grads[2 * k + 1] = _ordered_sum(delta)
        if k > 0:
            delta = (delta @ W) * (pre[k - 1] > 0.0)

    total = np.zeros(model.n_params)
    total += np.concatenate(grads)
    total /= n
    return float(_ordered_sum(losses) / n), total


def gradient(model: MlpModel, w: np.ndarray, x, y) -> np.ndarray:
    return loss_and_gradient(model, w, x, y)[1]


def finite_diff_gradient(model: MlpModel, w: np.ndarray, x, y, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time. Test oracle only."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x, y = _check_batch(model, x, y)
    w = np.array(w, dtype=np.float64)
    out = np.empty_like(w)
    for k in range(w.size):
        orig = w[k]
        w[k] = orig + h
        up = loss(model, w, x, y)
        w[k] = orig - h
        down = loss(model, w, x, y)
        w[k] = orig
        out[k] = (up - down) / (2.0 * h)
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max_k |a_k - b_k| / max(|a_k|, |b_k|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def sample_batch_rows(n_features: int, n: int, rng: Rng, n_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Standard normal features and uniform labels; used by gradient checks."""
    x = rng.normals(n * n_features).reshape(n, n_features)
    y = np.array([rng.below(n_classes) for _ in range(n)], dtype=np.intp)
    return x, y


def as_param_vector(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("parameter vectors are 1-D")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("parameter vector contains NaN or Inf")
    return v
