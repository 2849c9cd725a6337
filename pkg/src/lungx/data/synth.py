"""Seeded synthetic chest-film stand-ins: smooth backgrounds, bright soft blobs for positives."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .manifest import ManifestRecord, write_manifest
from .pgm import write_pgm

BLOBS_FILE = "blobs.json"
MANIFEST_FILE = "manifest.csv"


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 64
    negatives: int = 50
    positives: int = 50
    max_blobs: int = 2
    blob_radius: Tuple[float, float] = (0.08, 0.16)  # fraction of image size
    blob_intensity: Tuple[float, float] = (0.3, 0.5)
    noise: float = 0.03
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 8 or self.negatives < 0 or self.positives < 0 or self.max_blobs < 1:
            raise ValueError(f"invalid synthetic spec: {self}")


@dataclass(frozen=True)
class Blob:
    cy: float
    cx: float
    ry: float
    rx: float
    angle: float
    intensity: float


def _ellipse_distance(blob: Blob, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dy, dx = yy - blob.cy, xx - blob.cx
    c, s = np.cos(blob.angle), np.sin(blob.angle)
    u = (c * dx + s * dy) / blob.rx
    v = (-s * dx + c * dy) / blob.ry
    return np.sqrt(u * u + v * v)


def blob_mask(blobs: List[Blob], size: int) -> np.ndarray:
    """Boolean mask of pixels inside any blob ellipse."""
    mask = np.zeros((size, size), dtype=bool)
    for b in blobs:
        mask |= _ellipse_distance(b, size) <= 1.0
    return mask


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.full((size, size), rng.uniform(0.25, 0.4))
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.02, 0.06) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return img


def render(spec: SyntheticSpec, index: int, positive: bool) -> Tuple[np.ndarray, List[Blob]]:
    rng = np.random.default_rng([spec.seed, index])
    n = spec.image_size
    img = _background(rng, n)
    blobs: List[Blob] = []
    if positive:
        for _ in range(int(rng.integers(1, spec.max_blobs + 1))):
            ry, rx = rng.uniform(*spec.blob_radius, size=2) * n
            blob = Blob(
                cy=float(rng.uniform(0.2, 0.8) * n), cx=float(rng.uniform(0.2, 0.8) * n),
                ry=float(ry), rx=float(rx), angle=float(rng.uniform(0, np.pi)),
                intensity=float(rng.uniform(*spec.blob_intensity)),
            )
            d = _ellipse_distance(blob, n)
            img += blob.intensity / (1.0 + np.exp((d - 1.0) / 0.12))
            blobs.append(blob)
    img += rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0), blobs


def synth_dataset(spec: SyntheticSpec, out_dir: Union[str, Path]) -> Path:
    """Write PGM images, ``manifest.csv`` and a ``blobs.json`` sidecar; return the manifest path."""
    spec.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    records, sidecar = [], {}
    labels = [0] * spec.negatives + [1] * spec.positives
    for i, label in enumerate(labels):
        img, blobs = render(spec, i, bool(label))
        name = f"img_{i:05d}.pgm"
        write_pgm(out / name, img)
        records.append(ManifestRecord(name, label, "synthetic"))
        sidecar[name] = [asdict(b) for b in blobs]
    write_manifest(out / MANIFEST_FILE, records)
    meta = {"spec": asdict(spec), "blobs": sidecar}
    (out / BLOBS_FILE).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return out / MANIFEST_FILE


def load_blobs(directory: Union[str, Path]) -> Dict[str, List[Blob]]:
    meta = json.loads((Path(directory) / BLOBS_FILE).read_text(encoding="utf-8"))
    return {k: [Blob(**b) for b in v] for k, v in meta["blobs"].items()}
