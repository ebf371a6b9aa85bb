"""Confusion-matrix metrics for point-wise binary anomaly predictions.

The positive class is the anomaly (label 1). Any metric with a zero
denominator is defined as 0 so results stay total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(preds, labels) -> Confusion:
    """Count TP/FP/FN/TN positionally over equal-length 0/1 sequences."""
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs labels {labels.shape}")
    if len(preds) < 1:
        raise ValueError("need at least one prediction")
    if not (np.isin(preds, (0, 1)).all() and np.isin(labels, (0, 1)).all()):
        raise ValueError("predictions and labels must be 0 or 1")
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    tn = int(((preds == 0) & (labels == 0)).sum())
    return Confusion(tp=tp, fp=fp, fn=fn, tn=tn)


def prf1(c: Confusion) -> tuple[float, float, float]:
    """Precision TP/(TP+FP), recall TP/(TP+FN), F1 = 2PR/(P+R)."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def metrics_dict(c: Confusion) -> dict:
    """The metrics.json payload."""
    precision, recall, f1 = prf1(c)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "tp": c.tp,
        "fp": c.fp,
        "fn": c.fn,
        "tn": c.tn,
    }
