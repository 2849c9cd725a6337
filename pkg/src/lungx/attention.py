"""CBAM refinement of each pyramid level and multi-scale fusion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import functional as F
from .backbone import FeaturePyramid
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, concat


@dataclass(frozen=True)
class CbamConfig:
    reduction: int = 8
    spatial_kernel: int = 7

    def hidden(self, channels: int) -> int:
        return max(channels // self.reduction, 1)

    def validate(self) -> None:
        if self.reduction < 1:
            raise ValueError(f"reduction ratio must be positive, got {self.reduction}")
        if self.spatial_kernel % 2 != 1:
            raise ValueError(f"spatial kernel must be odd, got {self.spatial_kernel}")


@dataclass(frozen=True)
class FusionConfig:
    width: int = 32
    target_level: int = 0  # index into (c3, c4, c5) whose resolution the sum is taken at


class ChannelAttention(Module):
    """Shared two-layer MLP over global avg- and max-pooled descriptors."""

    def __init__(self, channels: int, config: CbamConfig, rng: np.random.Generator):
        hidden = config.hidden(channels)
        self.fc1 = Linear(channels, hidden, rng, init="he")
        self.fc2 = Linear(hidden, channels, rng, init="he")

    def mlp(self, d: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(d)))

    def forward(self, f: Tensor) -> Tensor:
        b, c = f.shape[:2]
        avg = F.global_pool(f, "avg").reshape(b, c)
        mx = F.global_pool(f, "max").reshape(b, c)
        return F.sigmoid(self.mlp(avg) + self.mlp(mx)).reshape(b, c, 1, 1)


class SpatialAttention(Module):
    def __init__(self, config: CbamConfig, rng: np.random.Generator):
        self.conv = Conv2d(2, 1, config.spatial_kernel, rng, bias=False)

    def forward(self, f: Tensor) -> Tensor:
        desc = concat([f.mean(axis=1, keepdims=True), f.max(axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv(desc))


class CBAM(Module):
    """Channel gate followed by spatial gate: ``f' = f * Mc(f)``, ``f'' = f' * Ms(f')``."""

    def __init__(self, channels: int, config: CbamConfig, rng: np.random.Generator):
        config.validate()
        self.channel = ChannelAttention(channels, config, rng)
        self.spatial = SpatialAttention(config, rng)

    def forward(self, f: Tensor) -> Tensor:
        f = f * self.channel(f)
        return f * self.spatial(f)


class Fusion(Module):
    """Project each level to a common width, resize to the target level, sum."""

    def __init__(self, channels: Sequence[int], config: FusionConfig, rng: np.random.Generator):
        self.config = config
        self.projections = [Conv2d(c, config.width, 1, rng) for c in channels]

    def forward(self, pyramid: Sequence[Tensor]) -> Tensor:
        batch = {p.shape[0] for p in pyramid}
        if len(batch) != 1:
            raise ValueError(f"pyramid batch mismatch: {[p.shape for p in pyramid]}")
        th, tw = pyramid[self.config.target_level].shape[2:]
        fused = None
        for proj, level in zip(self.projections, pyramid):
            x = proj(level)
            if x.shape[2:] != (th, tw):
                x = F.bilinear_resize(x, th, tw)
            fused = x if fused is None else fused + x
        return fused


class AttentionFusion(Module):
    """Independent CBAM per level, then fusion."""

    def __init__(self, channels: Sequence[int], cbam: CbamConfig, fusion: FusionConfig,
                 rng: np.random.Generator):
        self.cbams = [CBAM(c, cbam, rng) for c in channels]
        self.fusion = Fusion(channels, fusion, rng)

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        refined = [blk(level) for blk, level in zip(self.cbams, pyramid)]
        return self.fusion(refined)

