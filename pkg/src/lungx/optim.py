"""AdamW with decoupled weight decay, global-norm clipping, one-cycle schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if m.shape != p.data.shape:
                raise ValueError(f"optimizer state {m.shape} does not match parameter {p.shape}")
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update).astype(p.dtype)


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float = 1.0) -> float:
    """Rescale all grads so their joint L2 norm is at most ``max_norm``; return the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.dtype)
    return norm


@dataclass(frozen=True)
class OneCycleSchedule:
    total_steps: int
    peak_lr: float = 2e-4
    warmup_fraction: float = 0.3
    start_divisor: float = 25.0
    final_divisor: float = 1e4

    @property
    def start_lr(self) -> float:
        return self.peak_lr / self.start_divisor

    @property
    def final_lr(self) -> float:
        return self.peak_lr / self.final_divisor

    @property
    def warmup_steps(self) -> float:
        return self.warmup_fraction * self.total_steps


def _cosine(start: float, end: float, t: float) -> float:
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * t))


def lr_at(step: float, schedule: OneCycleSchedule) -> float:
    """Cosine warm-up from ``peak/start_divisor`` to ``peak``, then cosine anneal to ``peak/final_divisor``."""
    total = schedule.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    warm = schedule.warmup_steps
    if step <= warm:
        return _cosine(schedule.start_lr, schedule.peak_lr, step / warm) if warm > 0 else schedule.peak_lr
    return _cosine(schedule.peak_lr, schedule.final_lr, (step - warm) / (total - warm))
