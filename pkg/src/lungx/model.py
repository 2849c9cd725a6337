"""The assembled classifier: backbone -> CBAM x3 -> fusion -> transformer -> head."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from . import functional as F
from .attention import AttentionFusion, CbamConfig, FusionConfig
from .backbone import B3_BACKBONE, Backbone, BackboneConfig, StageConfig, pyramid_sizes
from .nn import Module
from .tensor import Tensor
from .transformer import ClassifierHead, Encoder, HeadConfig, PatchEmbed, ViTConfig, token_grid


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cbam: CbamConfig = field(default_factory=CbamConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelConfig":
        bb = dict(d["backbone"])
        bb["stages"] = tuple(StageConfig(**s) for s in bb["stages"])
        return cls(
            image_size=d["image_size"],
            backbone=BackboneConfig(**bb),
            cbam=CbamConfig(**d["cbam"]),
            fusion=FusionConfig(**d["fusion"]),
            vit=ViTConfig(**d["vit"]),
            head=HeadConfig(**d["head"]),
        )


PRESETS: Dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "paper": ModelConfig(
        image_size=300,
        backbone=B3_BACKBONE,
        cbam=CbamConfig(reduction=16),
        fusion=FusionConfig(width=96),
        vit=ViTConfig(embed_dim=384, heads=6, depth=12),
    ),
}


class LungX(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.backbone = Backbone(config.backbone, rng)
        self.neck = AttentionFusion(config.backbone.tap_channels, config.cbam, config.fusion, rng)
        fh, fw = pyramid_sizes(config.image_size, config.image_size)[config.fusion.target_level]
        self.embed = PatchEmbed(config.fusion.width, token_grid(fh, fw), config.vit, rng)
        self.encoder = Encoder(config.vit, rng)
        self.head = ClassifierHead(config.vit.embed_dim, config.head, rng)

    def features(self, images: Tensor) -> Tensor:
        """Fused multi-scale map at the fusion target resolution."""
        return self.neck(self.backbone(images))

    def logits_from_features(self, fused: Tensor) -> Tensor:
        tokens = self.encoder(self.embed(fused))
        return self.head.logits(tokens[:, 0])

    def logits(self, images: Tensor) -> Tensor:
        return self.logits_from_features(self.features(images))

    def forward(self, images: Tensor) -> Tensor:
        """Pneumonia probability ``[B, 1]``."""
        return F.sigmoid(self.logits(images))


def build_model(config: ModelConfig, seed: int = 0) -> LungX:
    return LungX(config, np.random.default_rng(seed))
