"""Binary detection metrics with stego as the positive class."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Metrics:
    acc: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int

    def as_dict(self) -> dict:
        return {"acc": self.acc, "f1": self.f1, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "n": self.n}


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Accuracy and F1 from hard 0/1 predictions; zero denominators yield 0."""
    preds = np.asarray(predictions)
    gold = np.asarray(labels)
    if preds.shape != gold.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError("predictions and labels must be equal-length nonempty vectors")
    for arr, name in ((preds, "predictions"), (gold, "labels")):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be 0/1")
    tp = int(np.sum((preds == 1) & (gold == 1)))
    fp = int(np.sum((preds == 1) & (gold == 0)))
    tn = int(np.sum((preds == 0) & (gold == 0)))
    fn = int(np.sum((preds == 0) & (gold == 1)))
    n = preds.size
    acc = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(acc=acc, f1=f1, tp=tp, fp=fp, tn=tn, fn=fn, n=n)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
