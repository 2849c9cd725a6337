"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic    8 bytes  b"LUNGXCKP"
    version  u32
    meta_len u32, then meta_len bytes of UTF-8 JSON (model config, epoch, metrics, extra)
    count    u32
    count x { name_len u16, name, ndim u8, dims u32 x ndim, float32 LE data }
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .metrics import MetricReport
from .model import LungX, ModelConfig

MAGIC = b"LUNGXCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    state: Dict[str, np.ndarray]
    epoch: int
    metrics: Optional[MetricReport] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: LungX, epoch: int, metrics: Optional[MetricReport] = None,
                   extra: Optional[Dict[str, Any]] = None) -> "Checkpoint":
        state = {k: np.array(v, dtype="<f4", copy=True) for k, v in model.state_dict().items()}
        return cls(model.config, state, epoch, metrics, dict(extra or {}))

    def build_model(self) -> LungX:
        model = LungX(self.config, np.random.default_rng(0))
        model.load_state_dict(self.state)
        return model.eval()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics.to_dict() if ckpt.metrics is not None else None,
        "extra": ckpt.extra,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(ckpt.state))]
    for name, arr in ckpt.state.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 8)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{source}: unsupported format version {version}")
        pos = 16
        meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 4 * n > len(buf):
                raise CheckpointError(f"{source}: truncated tensor {name}")
            state[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt checkpoint ({exc})") from None
    metrics = MetricReport.from_dict(meta["metrics"]) if meta["metrics"] is not None else None
    return Checkpoint(ModelConfig.from_dict(meta["config"]), state, meta["epoch"], metrics,
                      meta.get("extra", {}))


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read ({exc.strerror})") from None
    return decode_checkpoint(buf, str(path))
