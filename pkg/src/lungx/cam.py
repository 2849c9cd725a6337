"""Grad-CAM over the fused multi-scale feature map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.augment import resize
from .model import LungX
from .tensor import Tensor

OVERLAY_OPACITY = 0.4


@dataclass
class CamResult:
    heatmap: np.ndarray  # [h, w] at the fused-map resolution, in [0, 1]
    upsampled: np.ndarray  # [H, W] at the input resolution
    probability: float


def cam_from_gradients(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """``relu(sum_c mean(dY/dA_c) * A_c)`` min-max normalised; all zeros if degenerate."""
    weights = gradients.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activations, axes=1), 0.0)
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0:
        return np.zeros_like(cam, dtype=np.float64)
    return ((cam - lo) / (hi - lo)).astype(np.float64)


def grad_cam(model: LungX, image: np.ndarray) -> CamResult:
    """Heatmap for one preprocessed image ``[H, W]`` (or ``[C, H, W]``)."""
    model.eval()
    x = np.asarray(image, dtype=np.float32)
    if x.ndim == 2:
        x = np.repeat(x[None], model.config.backbone.in_channels, axis=0)
    fused = model.features(Tensor(x[None]))
    logit = model.logits_from_features(fused)
    logit.sum().backward()
    grads = fused.grad[0] if fused.grad is not None else np.zeros_like(fused.data[0])
    heat = cam_from_gradients(fused.data[0].astype(np.float64), grads.astype(np.float64))
    model.zero_grad()
    up = np.clip(resize(heat, x.shape[-2], x.shape[-1]), 0.0, 1.0)
    prob = float(1.0 / (1.0 + np.exp(-float(logit.data.reshape(-1)[0]))))
    return CamResult(heat, up, prob)


def overlay(gray: np.ndarray, heat: np.ndarray, opacity: float = OVERLAY_OPACITY) -> np.ndarray:
    """Blend a red heat layer over the grayscale image: ``(1-a)*gray + a*(heat, 0, 0)``."""
    g = np.clip(gray, 0.0, 1.0)[..., None].repeat(3, axis=2)
    red = np.zeros_like(g)
    red[..., 0] = heat
    return (1.0 - opacity) * g + opacity * red
