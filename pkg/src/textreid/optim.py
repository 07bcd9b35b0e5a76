"""Adam with bias correction, and the warmup-then-cosine learning-rate rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError, ShapeError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment buffers; order matches the parameter list."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p.data) for p in params],
        second_moment=[np.zeros_like(p.data) for p in params],
        beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState, lr: float) -> tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update, applied to params in place."""
    if lr <= 0.0:
        raise ValueError(f"adam_step: lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("adam_step: params/grads/state lengths differ")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step: non-finite gradient")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class LrSchedule:
    """Linear warmup to base_lr over the first warmup_epochs, then a cosine
    decay over the remaining span. Continuous at the boundary."""

    base_lr: float = 1e-5
    warmup_start_lr: float = 1e-6
    warmup_epochs: int = 5
    total_epochs: int = 60
    steps_per_epoch: int = 1

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


def lr_at(step: int, sched: LrSchedule) -> float:
    if step < 0 or step >= sched.total_steps:
        raise ValueError(f"lr_at: step {step} outside [0, {sched.total_steps})")
    w = sched.warmup_steps
    if step < w:
        frac = step / w
        return sched.warmup_start_lr + (sched.base_lr - sched.warmup_start_lr) * frac
    span = sched.total_steps - w
    progress = (step - w) / span
    return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
