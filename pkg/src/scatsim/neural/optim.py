"""Adam optimizer over named gradient tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import NumericError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    iterations: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    validation_every: int = 200
    validation_batches: int = 4

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations <= 0 or self.batch_size < 1:
            raise ValueError("learning rate, iterations and batch size must be positive")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(tensors, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place. Returns (tensors, state)."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        w = tensors[name]
        g = g.astype(w.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        w -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return tensors, state
