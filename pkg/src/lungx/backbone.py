"""EfficientNet-style convolutional extractor tapping strides 8, 16 and 32."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np

from . import functional as F
from .nn import BatchNorm, Conv2d, Module
from .tensor import Tensor

MIN_INPUT = 32
TAP_STAGES = (3, 4, 5)


@dataclass(frozen=True)
class StageConfig:
    out_channels: int
    depth: int
    stride: int
    expansion: int


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 16
    stages: Tuple[StageConfig, ...] = field(default_factory=lambda: (
        StageConfig(16, 1, 1, 1),
        StageConfig(24, 2, 2, 6),
        StageConfig(40, 2, 2, 6),
        StageConfig(80, 3, 2, 6),
        StageConfig(112, 3, 2, 6),
    ))
    in_channels: int = 1
    stem_stride: int = 2

    def validate(self) -> None:
        if len(self.stages) != 5:
            raise ValueError(f"expected five stages, got {len(self.stages)}")
        for i, s in enumerate(self.stages, 1):
            if s.depth < 1 or s.stride not in (1, 2) or s.expansion < 1 or s.out_channels < 1:
                raise ValueError(f"invalid stage {i}: {s}")
        cumulative = self.stem_stride
        strides = []
        for s in self.stages:
            cumulative *= s.stride
            strides.append(cumulative)
        if tuple(strides[2:]) != (8, 16, 32):
            raise ValueError(f"cumulative strides at taps must be 8/16/32, got {strides[2:]}")
        taps = self.tap_channels
        if not (taps[0] < taps[1] < taps[2]):
            raise ValueError(f"tap channel counts must be strictly increasing, got {taps}")

    @property
    def tap_channels(self) -> Tuple[int, int, int]:
        return tuple(self.stages[i - 1].out_channels for i in TAP_STAGES)


# EfficientNet-B3 stage widths/depths for stages 1-5 (stem 40).
B3_BACKBONE = BackboneConfig(
    stem_channels=40,
    stages=(
        StageConfig(24, 2, 1, 1),
        StageConfig(32, 3, 2, 6),
        StageConfig(48, 3, 2, 6),
        StageConfig(96, 5, 2, 6),
        StageConfig(136, 5, 2, 6),
    ),
)


class FeaturePyramid(NamedTuple):
    c3: Tensor
    c4: Tensor
    c5: Tensor


class ConvBNAct(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, act=True, depthwise=False):
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, bias=False, depthwise=depthwise)
        self.bn = BatchNorm(out_ch)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        x = self.bn(self.conv(x))
        return F.silu(x) if self.act else x


class MBConv(Module):
    """Inverted bottleneck: expand 1x1 -> depthwise 3x3 -> project 1x1."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, expansion: int, rng):
        hidden = in_ch * expansion
        self.expand = ConvBNAct(in_ch, hidden, 1, rng) if expansion != 1 else None
        self.depthwise = ConvBNAct(hidden, hidden, 3, rng, stride=stride, depthwise=True)
        self.project = ConvBNAct(hidden, out_ch, 1, rng, act=False)
        self.residual = stride == 1 and in_ch == out_ch

    def forward(self, x: Tensor) -> Tensor:
        h = self.expand(x) if self.expand is not None else x
        h = self.project(self.depthwise(h))
        return x + h if self.residual else h


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.stem = ConvBNAct(config.in_channels, config.stem_channels, 3, rng, stride=config.stem_stride)
        self.stages: List[Module] = []
        ch = config.stem_channels
        for s in config.stages:
            blocks = []
            for d in range(s.depth):
                blocks.append(MBConv(ch, s.out_channels, s.stride if d == 0 else 1, s.expansion, rng))
                ch = s.out_channels
            self.stages.append(_Sequential(blocks))

    def forward(self, images: Tensor) -> FeaturePyramid:
        if images.ndim != 4 or images.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected images [B,{self.config.in_channels},H,W], got {images.shape}"
            )
        h, w = images.shape[2:]
        if h < MIN_INPUT or w < MIN_INPUT:
            raise ValueError(f"input {h}x{w} is below the minimum size {MIN_INPUT}x{MIN_INPUT}")
        x = self.stem(images)
        taps = []
        for i, stage in enumerate(self.stages, 1):
            x = stage(x)
            if i in TAP_STAGES:
                taps.append(x)
        return FeaturePyramid(*taps)


class _Sequential(Module):
    def __init__(self, blocks):
        self.blocks = list(blocks)

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


def build_backbone(config: BackboneConfig, rng: np.random.Generator) -> Backbone:
    return Backbone(config, rng)


def pyramid_sizes(h: int, w: int) -> List[Tuple[int, int]]:
    """Spatial extents of the three taps under ceil division."""
    return [(-(-h // s), -(-w // s)) for s in (8, 16, 32)]
