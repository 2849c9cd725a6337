"""Training augmentation and deterministic evaluation preprocessing for grayscale images."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy import ndimage

from ..functional import resize_matrix
from .manifest import ImageSample

EVAL_RESIZE_RATIO = 1.14
NORM_MEAN = 0.5
NORM_STD = 0.25


@dataclass(frozen=True)
class AugmentConfig:
    target_size: int = 64
    crop_scale: Tuple[float, float] = (0.7, 1.0)
    crop_ratio: Tuple[float, float] = (3 / 4, 4 / 3)
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation: float = 10.0  # degrees, symmetric range
    brightness: float = 0.2
    contrast: float = 0.2
    erase_prob: float = 0.25
    erase_area: Tuple[float, float] = (0.02, 0.1)
    erase_ratio: Tuple[float, float] = (0.3, 3.3)

    def validate(self) -> None:
        for name in ("hflip_prob", "vflip_prob", "erase_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("crop_scale", "crop_ratio", "erase_area", "erase_ratio"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a non-empty positive range, got {(lo, hi)}")
        if self.crop_scale[1] > 1.0 or self.erase_area[1] > 1.0:
            raise ValueError("area fractions cannot exceed 1")
        if self.rotation < 0 or self.brightness < 0 or self.contrast < 0:
            raise ValueError("rotation and jitter ranges must be non-negative")
        if self.target_size < 1:
            raise ValueError("target_size must be positive")

    def disabled(self) -> "AugmentConfig":
        """Same target size with every random transform switched off."""
        return replace(self, crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), hflip_prob=0.0,
                       vflip_prob=0.0, rotation=0.0, brightness=0.0, contrast=0.0, erase_prob=0.0)


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize (half-pixel centres, edge clamp), same kernel as the tensor op."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.astype(np.float64, copy=True)
    return resize_matrix(h, out_h) @ img @ resize_matrix(w, out_w).T


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def random_resized_crop(img, scale, ratio, target: int, rng) -> np.ndarray:
    h, w = img.shape
    area = h * w * rng.uniform(*scale)
    aspect = _log_uniform(rng, *ratio)
    cw = min(max(int(round(math.sqrt(area * aspect))), 1), w)
    ch = min(max(int(round(math.sqrt(area / aspect))), 1), h)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return resize(img[top:top + ch, left:left + cw], target, target)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return img
    return ndimage.rotate(img, degrees, reshape=False, order=1, mode="nearest")


def jitter(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    img = img * brightness
    m = img.mean()
    return (img - m) * contrast + m


def erase_rectangle(img: np.ndarray, fraction: float, aspect: float,
                    rng: np.random.Generator) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    """Overwrite a ``fraction``-of-area rectangle with uniform noise.

    Returns the new image and ``(top, left, height, width)``.
    """
    h, w = img.shape
    area = fraction * h * w
    eh = min(max(int(round(math.sqrt(area / aspect))), 1), h)
    ew = min(max(int(round(math.sqrt(area * aspect))), 1), w)
    top = int(rng.integers(0, h - eh + 1))
    left = int(rng.integers(0, w - ew + 1))
    out = img.copy()
    out[top:top + eh, left:left + ew] = rng.random((eh, ew))
    return out, (top, left, eh, ew)


def augment_array(img: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    if min(img.shape) < 8:
        raise ValueError(f"augmentation needs at least 8x8 input, got {img.shape}")
    x = random_resized_crop(np.asarray(img, dtype=np.float64), config.crop_scale,
                            config.crop_ratio, config.target_size, rng)
    if rng.random() < config.hflip_prob:
        x = x[:, ::-1]
    if rng.random() < config.vflip_prob:
        x = x[::-1, :]
    x = rotate(x, rng.uniform(-config.rotation, config.rotation))
    b = rng.uniform(1 - config.brightness, 1 + config.brightness)
    c = rng.uniform(1 - config.contrast, 1 + config.contrast)
    if b != 1.0 or c != 1.0:
        x = jitter(x, b, c)
    x = np.clip(x, 0.0, 1.0)
    if rng.random() < config.erase_prob:
        frac = rng.uniform(*config.erase_area)
        x, _ = erase_rectangle(x, frac, _log_uniform(rng, *config.erase_ratio), rng)
    return np.ascontiguousarray(x)


def augment_train(sample: ImageSample, config: AugmentConfig, rng: np.random.Generator) -> ImageSample:
    """Crop, flips, rotation, brightness/contrast jitter, clamp, random erasing."""
    return ImageSample(augment_array(sample.pixels, config, rng), sample.label)


def eval_array(img: np.ndarray, target: int, resize_ratio: float = EVAL_RESIZE_RATIO) -> np.ndarray:
    """Resize so the short side is ``ceil(target * ratio)``, then centre-crop to ``target``."""
    h, w = img.shape
    short = math.ceil(target * resize_ratio)
    if h <= w:
        nh, nw = short, max(int(round(w * short / h)), short)
    else:
        nh, nw = max(int(round(h * short / w)), short), short
    x = resize(np.asarray(img, dtype=np.float64), nh, nw)
    top, left = (nh - target) // 2, (nw - target) // 2
    return x[top:top + target, left:left + target]


def normalize(img: np.ndarray, mean: float = NORM_MEAN, std: float = NORM_STD) -> np.ndarray:
    return (img - mean) / std


def preprocess_eval(sample: ImageSample, target: int, mean: float = NORM_MEAN,
                    std: float = NORM_STD, resize_ratio: float = EVAL_RESIZE_RATIO) -> ImageSample:
    return ImageSample(normalize(eval_array(sample.pixels, target, resize_ratio), mean, std),
                       sample.label)
