"""Manifest CSV (``path,label,source``) and image records."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .pgm import read_pgm

HEADER = ("path", "label", "source")
SOURCES = ("rsna", "chexpert", "synthetic")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    source: str

    def resolve(self, root: Union[str, Path, None]) -> Path:
        p = Path(self.path)
        return p if p.is_absolute() or root is None else Path(root) / p


@dataclass
class ImageSample:
    pixels: np.ndarray  # [H, W] grayscale
    label: int


@dataclass
class Manifest:
    records: List[ManifestRecord]
    root: Path  # relative paths resolve against this directory

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def image_path(self, i: int) -> Path:
        return self.records[i].resolve(self.root)

    def subset(self, indices: Sequence[int]) -> "Manifest":
        return Manifest([self.records[i] for i in indices], self.root)


def load_manifest(csv_path: Union[str, Path]) -> Manifest:
    csv_path = Path(csv_path)
    try:
        text = csv_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{csv_path}: cannot read ({exc.strerror})") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or tuple(c.strip() for c in rows[0]) != HEADER:
        raise ManifestError(f"{csv_path}: header must be {','.join(HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"{csv_path}:{lineno}: expected 3 fields, got {len(row)}")
        path, label, source = (c.strip() for c in row)
        if label not in ("0", "1"):
            raise ManifestError(f"{csv_path}:{lineno}: label must be 0 or 1, got {label!r}")
        if source not in SOURCES:
            raise ManifestError(f"{csv_path}:{lineno}: unknown source {source!r}")
        if not path:
            raise ManifestError(f"{csv_path}:{lineno}: empty path")
        records.append(ManifestRecord(path, int(label), source))
    return Manifest(records, csv_path.parent)


def write_manifest(csv_path: Union[str, Path], records: Sequence[ManifestRecord]) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in records:
            writer.writerow((r.path, r.label, r.source))


def decode_image(path: Union[str, Path], label: int = 0) -> ImageSample:
    return ImageSample(read_pgm(path), label)


def stratified_split(labels: Sequence[int], val_fraction: float,
                     rng: np.random.Generator) -> Tuple[List[int], List[int]]:
    """Split indices so each class contributes ``val_fraction`` of its members to validation."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    labels = np.asarray(labels)
    train, val = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(idx.size * val_fraction))
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return sorted(train), sorted(val)
