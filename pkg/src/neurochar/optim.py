"""Adam optimizer with float64 moment buffers and a triangular cyclic
learning-rate schedule (min 0.0001, max 0.005 by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NumericError, UsageError


@dataclass
class CyclicLrSchedule:
    lr_min: float = 0.0001
    lr_max: float = 0.005
    period_steps: int = 100

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise UsageError(f"cyclic schedule needs lr_min < lr_max, got {self.lr_min} >= {self.lr_max}")
        if self.period_steps < 2:
            raise UsageError(f"period_steps must be >= 2, got {self.period_steps}")


def cyclic_lr(schedule: CyclicLrSchedule, step: int) -> float:
    """Triangular wave: lr_min at step 0, lr_max at period/2, lr_min at period."""
    if step < 0:
        raise UsageError(f"step must be >= 0, got {step}")
    phase = (step % schedule.period_steps) / schedule.period_steps  # in [0,1)
    frac = 2.0 * phase if phase <= 0.5 else 2.0 * (1.0 - phase)
    return schedule.lr_min + (schedule.lr_max - schedule.lr_min) * frac


@dataclass
class AdamState:
    """Per-parameter first/second moments (float64) plus the step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, rate: float) -> None:
    """One bias-corrected Adam update, in place, in sorted parameter order."""
    if rate <= 0:
        raise UsageError(f"learning rate must be > 0, got {rate}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.data.shape, dtype=np.float64)
            state.m[name] = m
        v = state.v.get(name)
        if v is None:
            v = np.zeros(p.data.shape, dtype=np.float64)
            state.v[name] = v
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = (p.data.astype(np.float64) - rate * update).astype(p.data.dtype)
