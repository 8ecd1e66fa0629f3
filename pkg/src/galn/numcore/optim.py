from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor


@dataclass
class OptimState:
    """SGD with momentum, L2 weight decay and a step learning-rate schedule."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    step_size: int = 30
    drop_factor: float = 0.1
    momentum_buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be nonnegative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.step_size < 1:
            raise ValueError(f"step_size must be a positive epoch count, got {self.step_size}")
        if not 0 < self.drop_factor <= 1:
            raise ValueError(f"drop_factor must lie in (0, 1], got {self.drop_factor}")


def step_lr(lr0: float, epoch: int, step_size: int, drop_factor: float) -> float:
    """Learning rate in effect after ``epoch`` completed epochs."""
    return lr0 * drop_factor ** math.floor(epoch / step_size)


def sgd_step(params: Mapping[str, Tensor], state: OptimState) -> None:
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"sgd_step: no gradient for parameter(s) {', '.join(missing)}")
    for name, p in params.items():
        d = p.grad + state.weight_decay * p.values if state.weight_decay else p.grad
        buf = state.momentum_buffers.get(name)
        if buf is None or state.momentum == 0:
            buf = np.array(d, dtype=np.float64)
        else:
            buf = state.momentum * buf + d
        state.momentum_buffers[name] = buf
        p.values = p.values - state.lr * buf
