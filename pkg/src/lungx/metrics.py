"""Threshold metrics and rank-based AUC."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: Optional[float]
    counts: ConfusionCounts
    loss: Optional[float] = None
    undefined: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "MetricReport":
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        d["undefined"] = tuple(d.get("undefined", ()))
        return cls(**d)


def _check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return labels.astype(np.int64)


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Count outcomes, predicting positive iff ``p >= threshold``."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = _check_labels(labels)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.size} scores vs {labels.size} labels")
    pred = probs >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def compute_metrics(counts: ConfusionCounts) -> Dict[str, object]:
    """Accuracy/precision/recall/F1. Zero denominators give 0 and are listed in ``undefined``."""
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    accuracy = ratio(counts.tp + counts.tn, counts.total, "accuracy")
    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    recall = ratio(counts.tp, counts.tp + counts.fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1,
            "undefined": tuple(undefined)}


def auc(probs, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted as 1/2."""
    scores = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = _check_labels(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.size} scores vs {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"AUC needs both classes; got {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(scores)  # midranks for ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def report(probs, labels, threshold: float = 0.5, loss: Optional[float] = None) -> MetricReport:
    """Full report; AUC is ``None`` (and flagged) when only one class is present."""
    counts = confusion(probs, labels, threshold)
    m = compute_metrics(counts)
    undefined = list(m["undefined"])
    try:
        area = auc(probs, labels)
    except ValueError:
        area = None
        undefined.append("auc")
    return MetricReport(m["accuracy"], m["precision"], m["recall"], m["f1"], area, counts,
                        loss, tuple(undefined))
