"""Patch embedding, pre-norm transformer encoder and the sigmoid classification head."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .nn import BatchNorm, Dropout, LayerNorm, Linear, Module, Parameter, trunc_normal
from .tensor import Tensor, broadcast_to, concat, pad

PATCH = 4


@dataclass(frozen=True)
class ViTConfig:
    embed_dim: int = 64
    heads: int = 4
    depth: int = 4
    mlp_ratio: int = 4
    dropout: float = 0.0
    patch_size: int = PATCH

    def validate(self) -> None:
        if self.patch_size != PATCH:
            raise ValueError(f"patch size is fixed at {PATCH}, got {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed dim {self.embed_dim} not divisible by {self.heads} heads")


@dataclass(frozen=True)
class HeadConfig:
    hidden: Optional[int] = None  # defaults to embed_dim // 2
    dropout: float = 0.2


def token_grid(h: int, w: int) -> Tuple[int, int]:
    return -(-h // PATCH), -(-w // PATCH)


def token_count(h: int, w: int) -> int:
    """Patch tokens plus the class token for an ``h x w`` fused map."""
    gh, gw = token_grid(h, w)
    return gh * gw + 1


class PatchEmbed(Module):
    """Zero-pad bottom/right to a multiple of 4, embed 4x4 patches, prepend class token."""

    def __init__(self, in_ch: int, grid: Tuple[int, int], config: ViTConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.grid = grid
        self.proj = Linear(in_ch * PATCH * PATCH, d, rng)
        self.cls_token = Parameter(trunc_normal(rng, (1, 1, d)))
        self.pos_embed = Parameter(np.zeros((1, grid[0] * grid[1] + 1, d)))

    def forward(self, fused: Tensor) -> Tensor:
        b, c, h, w = fused.shape
        gh, gw = token_grid(h, w)
        if (gh, gw) != self.grid:
            raise ValueError(f"fused map {h}x{w} gives a {gh}x{gw} token grid, model expects {self.grid}")
        x = fused
        if (gh * PATCH, gw * PATCH) != (h, w):
            x = pad(x, ((0, 0), (0, 0), (0, gh * PATCH - h), (0, gw * PATCH - w)))
        x = x.reshape(b, c, gh, PATCH, gw, PATCH).transpose(0, 2, 4, 1, 3, 5)
        x = self.proj(x.reshape(b, gh * gw, c * PATCH * PATCH))
        cls = broadcast_to(self.cls_token, (b, 1, x.shape[2]))
        return concat([cls, x], axis=1) + self.pos_embed


class MultiHeadSelfAttention(Module):
    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        config.validate()
        d = config.embed_dim
        self.heads = config.heads
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        attn = F.softmax(scores, axis=-1)
        self.last_attention = attn.data
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class EncoderBlock(Module):
    """Pre-norm block: ``x += MHSA(LN(x)); x += MLP(LN(x))``."""

    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(config, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, d * config.mlp_ratio, rng)
        self.fc2 = Linear(d * config.mlp_ratio, d, rng)
        self.drop = Dropout(config.dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attn(self.norm1(x)))
        return x + self.drop(self.fc2(F.gelu(self.fc1(self.norm2(x)))))


class Encoder(Module):
    def __init__(self, config: ViTConfig, rng: np.random.Generator):
        config.validate()
        self.blocks: List[EncoderBlock] = [EncoderBlock(config, rng) for _ in range(config.depth)]

    def forward(self, tokens: Tensor) -> Tensor:
        for blk in self.blocks:
            tokens = blk(tokens)
        return tokens


class ClassifierHead(Module):
    """fc1 -> batchnorm -> GELU -> dropout -> fc2, producing one logit per sample."""

    def __init__(self, embed_dim: int, config: HeadConfig, rng: np.random.Generator):
        hidden = config.hidden or embed_dim // 2
        self.fc1 = Linear(embed_dim, hidden, rng)
        self.bn = BatchNorm(hidden)
        self.drop = Dropout(config.dropout, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def logits(self, cls: Tensor) -> Tensor:
        return self.fc2(self.drop(F.gelu(self.bn(self.fc1(cls)))))

    def forward(self, cls: Tensor) -> Tensor:
        return F.sigmoid(self.logits(cls))
