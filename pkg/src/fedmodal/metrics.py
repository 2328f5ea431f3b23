"""Accuracy, confusion matrices, and the federated-vs-centralized gap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = actual class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got shape {c.shape}")
        if (c < 0).any():
            raise ShapeError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0


def accuracy(predictions, labels) -> float:
    """Fraction of predictions equal to their labels."""
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape:
        raise ShapeError(f"predictions shape {preds.shape} != labels shape {labs.shape}")
    if preds.size == 0:
        raise ShapeError("cannot compute accuracy of zero predictions")
    return float((preds == labs).mean())


def confusion(predictions, labels, class_count: int) -> ConfusionMatrix:
    """Tally actual-vs-predicted counts into a class_count x class_count matrix."""
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape:
        raise ShapeError(f"predictions shape {preds.shape} != labels shape {labs.shape}")
    if (preds < 0).any() or (preds >= class_count).any():
        raise ShapeError(f"predictions outside [0, {class_count})")
    if (labs < 0).any() or (labs >= class_count).any():
        raise ShapeError(f"labels outside [0, {class_count})")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (labs, preds), 1)
    return ConfusionMatrix(counts)


def normalize(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a confusion matrix.

    Returns (normalized, zero_rows): rows with no samples stay all-zero
    and are flagged True in ``zero_rows`` (class absent from the eval set).
    """
    counts = cm.counts.astype(np.float64)
    row_sums = counts.sum(axis=1)
    zero_rows = row_sums == 0.0
    safe = np.where(zero_rows, 1.0, row_sums)
    return counts / safe[:, None], zero_rows


def delta_gap(a_fed: float, a_sum: float) -> float:
    """Absolute accuracy gap between a federated and a centralized model."""
    return abs(a_fed - a_sum)
