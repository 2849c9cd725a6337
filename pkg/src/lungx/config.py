"""Flat training configuration, loadable from a TOML file and overridable from the CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attention import CbamConfig, FusionConfig
from .data.augment import AugmentConfig
from .model import PRESETS, ModelConfig
from .objectives import LossConfig
from .optim import OneCycleSchedule
from .transformer import HeadConfig


@dataclass(frozen=True)
class TrainConfig:
    # model
    preset: str = "desk"
    image_size: int = 64
    replicate_channels: bool = False
    embed_dim: int = 0  # 0 keeps the preset's value (same for the other 0-valued model knobs)
    heads: int = 0
    depth: int = -1
    fusion_width: int = 0
    cbam_reduction: int = 0
    head_dropout: float = -1.0
    # optimisation
    epochs: int = 25
    batch_size: int = 16
    eval_batch_size: int = 32
    peak_lr: float = 2e-4
    weight_decay: float = 1e-4
    warmup_fraction: float = 0.3
    start_divisor: float = 25.0
    final_divisor: float = 1e4
    max_grad_norm: float = 1.0
    patience: int = 7
    min_delta: float = 1e-6
    # loss
    alpha: float = 0.8
    gamma: float = 2.0
    # data
    seed: int = 0
    val_fraction: float = 0.15
    norm_mean: float = 0.5
    norm_std: float = 0.25
    eval_resize_ratio: float = 1.14
    crop_scale_min: float = 0.7
    crop_scale_max: float = 1.0
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation: float = 10.0
    brightness: float = 0.2
    contrast: float = 0.2
    erase_prob: float = 0.25
    erase_area_min: float = 0.02
    erase_area_max: float = 0.1

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_batch_size < 1 or self.patience < 1:
            raise ValueError("epochs >= 0, batch sizes >= 1 and patience >= 1 are required")
        if self.peak_lr <= 0 or self.max_grad_norm <= 0 or self.norm_std <= 0:
            raise ValueError("peak_lr, max_grad_norm and norm_std must be positive")
        self.augment().validate()
        self.loss().validate()

    def model(self) -> ModelConfig:
        base = PRESETS[self.preset]
        vit = base.vit
        vit = replace(
            vit,
            embed_dim=self.embed_dim or vit.embed_dim,
            heads=self.heads or vit.heads,
            depth=vit.depth if self.depth < 0 else self.depth,
        )
        cfg = replace(
            base,
            image_size=self.image_size,
            backbone=replace(base.backbone, in_channels=3 if self.replicate_channels else 1),
            cbam=CbamConfig(self.cbam_reduction or base.cbam.reduction, base.cbam.spatial_kernel),
            fusion=FusionConfig(self.fusion_width or base.fusion.width, base.fusion.target_level),
            vit=vit,
            head=HeadConfig(base.head.hidden,
                            base.head.dropout if self.head_dropout < 0 else self.head_dropout),
        )
        cfg.vit.validate()
        return cfg

    def augment(self) -> AugmentConfig:
        return AugmentConfig(
            target_size=self.image_size,
            crop_scale=(self.crop_scale_min, self.crop_scale_max),
            hflip_prob=self.hflip_prob,
            vflip_prob=self.vflip_prob,
            rotation=self.rotation,
            brightness=self.brightness,
            contrast=self.contrast,
            erase_prob=self.erase_prob,
            erase_area=(self.erase_area_min, self.erase_area_max),
        )

    def loss(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, gamma=self.gamma)

    def schedule(self, total_steps: int) -> OneCycleSchedule:
        return OneCycleSchedule(total_steps, self.peak_lr, self.warmup_fraction,
                                self.start_divisor, self.final_divisor)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        out = {}
        for k, v in d.items():
            default = getattr(cls, k)
            out[k] = coerce(k, v, type(default))
        return cls(**out)


def coerce(key: str, value: Any, kind: type) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ValueError(f"{key}: expected {kind.__name__}, got {value!r}") from None


def load_config(path: Union[str, Path]) -> TrainConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"{path}: config must be flat key/value pairs; found tables {nested}")
    return TrainConfig.from_dict(data)
