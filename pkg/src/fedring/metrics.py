"""Evaluation formulas: accuracy from confusion counts, Dice score, recall."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def accuracy(counts: ConfusionCounts) -> float:
    """(TP + TN) / (TP + TN + FP + FN)."""
    if counts.total == 0:
        raise EmptyError("accuracy is undefined on zero counts")
    return (counts.tp + counts.tn) / counts.total


def _as_masks(y, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    if y.shape != y_pred.shape:
        raise ShapeError(f"mask shapes differ: {y.shape} vs {y_pred.shape}")
    return y, y_pred


def dice(y, y_pred) -> float:
    """2 |Y ∩ Y'| / (|Y| + |Y'|); undefined (raises) when both masks are empty."""
    y, y_pred = _as_masks(y, y_pred)
    denom = int(y.sum()) + int(y_pred.sum())
    if denom == 0:
        raise EmptyError("Dice is undefined when both masks are empty")
    return 2.0 * int(np.logical_and(y, y_pred).sum()) / denom


def recall(y, y_pred) -> float:
    """|Y ∩ Y'| / |Y|; requires a non-empty ground truth."""
    y, y_pred = _as_masks(y, y_pred)
    positives = int(y.sum())
    if positives == 0:
        raise EmptyError("recall is undefined on an empty ground truth")
    return int(np.logical_and(y, y_pred).sum()) / positives
