"""Class-balanced sampling with replacement."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np


def weighted_sampler(labels: Sequence[int], rng: np.random.Generator) -> Iterator[int]:
    """Infinite index stream: pick a class with probability 1/2, then a uniform member of it."""
    labels = np.asarray(labels)
    by_class = [np.flatnonzero(labels == c) for c in (0, 1)]
    if any(idx.size == 0 for idx in by_class):
        raise ValueError(
            f"balanced sampling needs both classes; got {by_class[0].size} negatives, "
            f"{by_class[1].size} positives"
        )
    while True:
        members = by_class[int(rng.random() < 0.5)]
        yield int(members[rng.integers(members.size)])


def sample_marginals(labels: Sequence[int]) -> np.ndarray:
    """Per-record draw probability under :func:`weighted_sampler`."""
    labels = np.asarray(labels)
    counts = np.array([np.sum(labels == 0), np.sum(labels == 1)], dtype=np.float64)
    return 0.5 / counts[labels]
