"""Adam, plateau learning-rate decay and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
) -> None:
    """In-place bias-corrected Adam update over ``sorted(params)``."""
    for name in grads:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name in sorted(params):
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class ReduceLROnPlateau:
    """Multiply the rate by ``factor`` after ``patience`` epochs without an
    improvement larger than ``min_delta``."""

    lr: float
    factor: float = 0.5
    patience: int = 5
    min_delta: float = 1e-6
    min_lr: float = 1e-6
    best: float = float("inf")
    wait: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.factor < 1.0:
            raise ValueError("plateau factor must lie in (0, 1)")

    def step(self, value: float) -> float:
        if value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


@dataclass
class EarlyStopping:
    """Track the best epoch; ``should_stop`` after ``patience`` epochs without
    strict improvement."""

    patience: int
    best: float = float("inf")
    best_epoch: int = 0
    wait: int = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; True if it is a new best."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience
