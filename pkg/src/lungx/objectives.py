"""Combined BCE + focal objective for binary pneumonia classification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, clamp, log

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.8
    gamma: float = 2.0
    bce_weight: float = 0.5
    focal_weight: float = 0.5
    eps: float = EPS

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if abs(self.bce_weight + self.focal_weight - 1.0) > 1e-12:
            raise ValueError("bce_weight + focal_weight must equal 1")


def _prepare(p, y, eps: float):
    p = as_tensor(p)
    labels = np.asarray(y, dtype=p.dtype).reshape(p.shape)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return clamp(p, eps, 1.0 - eps), labels


def _reduce(loss: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return loss.mean()
    if reduction == "none":
        return loss
    raise ValueError(f"unknown reduction {reduction!r}")


def bce(p, y, eps: float = EPS, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on probabilities, batch-averaged by default."""
    p, y = _prepare(p, y, eps)
    return _reduce(-(y * log(p) + (1.0 - y) * log(1.0 - p)), reduction)


def focal(p, y, alpha: float = 0.8, gamma: float = 2.0, eps: float = EPS,
          reduction: str = "mean") -> Tensor:
    """Alpha-balanced focal loss; ``alpha`` weights the positive class."""
    p, y = _prepare(p, y, eps)
    pt = y * p + (1.0 - y) * (1.0 - p)
    at = y * alpha + (1.0 - y) * (1.0 - alpha)
    return _reduce(-(at * (1.0 - pt) ** gamma * log(pt)), reduction)


def combined_loss(p, y, config: LossConfig = LossConfig()) -> Tensor:
    """``bce_weight * BCE + focal_weight * focal`` (0.5 / 0.5 by default)."""
    config.validate()
    return (config.bce_weight * bce(p, y, config.eps)
            + config.focal_weight * focal(p, y, config.alpha, config.gamma, config.eps))
