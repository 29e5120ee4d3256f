"""Parameter update rules and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

BASE_BATCH = 256


@dataclass(frozen=True)
class HyperParams:
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: float = 5.0
    decay_every_epochs: int = 30
    decay_factor: float = 0.1
    mode: str = "plain"

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_every_epochs < 1:
            raise ValueError("decay_every_epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.mode not in ("plain", "momentum"):
            raise ValueError(f"unknown update mode {self.mode!r}")


@dataclass
class OptimizerState:
    velocity: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "OptimizerState":
        return cls(np.zeros(n_params), 0)


def learning_rate(hp: HyperParams, n_workers: int, local_batch: int, epoch_float: float) -> float:
    """Linearly scaled rate (``base_lr`` per 256 samples) with warmup and step decay.

    Warmup interpolates from ``base_lr`` to the scaled target; afterwards the
    target is multiplied by ``decay_factor`` once per ``decay_every_epochs``.
    """
    if n_workers < 1 or local_batch < 1:
        raise ValueError("n_workers and local_batch must be >= 1")
    if epoch_float < 0:
        raise ValueError("epoch_float must be >= 0")
    target = hp.base_lr * (n_workers * local_batch) / BASE_BATCH
    if epoch_float < hp.warmup_epochs:
        return hp.base_lr + (target - hp.base_lr) * (epoch_float / hp.warmup_epochs)
    return target * hp.decay_factor ** math.floor(epoch_float / hp.decay_every_epochs)


def sgd_update(w: np.ndarray, delta: np.ndarray, state: Optional[OptimizerState],
               hp: HyperParams, lr: float):
    """One step. Returns ``(w_next, state_next)``; inputs are not modified.

    plain:    w' = w - lr * delta
    momentum: g = delta + weight_decay * w;  v' = momentum * v + g;  w' = w - lr * v'
    """
    if w.shape != delta.shape:
        raise ValueError(f"length mismatch: params {w.shape} vs update {delta.shape}")
    if not lr > 0:
        raise ValueError("lr must be > 0")
    if state is None:
        state = OptimizerState.zeros(w.size)
    if hp.mode == "plain":
        return w - lr * delta, OptimizerState(state.velocity, state.iteration + 1)
    if state.velocity.shape != w.shape:
        raise ValueError("velocity length does not match parameters")
    g = delta + hp.weight_decay * w
    v = hp.momentum * state.velocity + g
    return w - lr * v, OptimizerState(v, state.iteration + 1)
