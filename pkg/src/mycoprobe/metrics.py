"""Top-k accuracy, per-class breakdowns, and submission files.

Ties are broken toward the lower class index everywhere, so rankings are
deterministic and identical across platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import LabelSpace
from .errors import IoFailure, KOutOfRange, MissingLabels, NonFiniteValue, ShapeMismatch


@dataclass
class PredictionSet:
    """Scores per row with optional true labels (absent for test splits)."""

    scores: np.ndarray
    row_ids: list[str]
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeMismatch(f"scores must be a matrix, got shape {self.scores.shape}")
        if len(self.row_ids) != self.scores.shape[0]:
            raise ShapeMismatch(f"{len(self.row_ids)} ids for {self.scores.shape[0]} rows")
        if not np.isfinite(self.scores).all():
            raise NonFiniteValue("scores contain NaN or infinity")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != (self.scores.shape[0],):
                raise ShapeMismatch("one true label per row required")


@dataclass
class ClassAccuracy:
    class_id: str
    frequency: int
    topk: float


def _ranking(scores: np.ndarray, k: int) -> np.ndarray:
    # stable argsort of the negated scores: ties keep ascending class index
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def topk_accuracy(preds: PredictionSet, k: int) -> float:
    """Fraction of rows whose true label is among the k highest scores."""
    if preds.true_labels is None:
        raise MissingLabels("prediction set has no true labels")
    c = preds.scores.shape[1]
    if not 1 <= k <= c:
        raise KOutOfRange(f"k={k} outside [1, {c}]")
    top = _ranking(preds.scores, k)
    hits = (top == preds.true_labels[:, None]).any(axis=1)
    return float(hits.mean())


def per_class_topk(preds: PredictionSet, k: int, labels: LabelSpace) -> list[ClassAccuracy]:
    """Image count and top-k accuracy for every class present in the labels.

    Classes with one or two images legitimately land on exactly 0.0 or 1.0;
    the count-weighted mean of the rows equals the overall top-k accuracy.
    """
    if preds.true_labels is None:
        raise MissingLabels("prediction set has no true labels")
    c = preds.scores.shape[1]
    if not 1 <= k <= c:
        raise KOutOfRange(f"k={k} outside [1, {c}]")
    top = _ranking(preds.scores, k)
    hits = (top == preds.true_labels[:, None]).any(axis=1)
    rows = []
    for cls in np.unique(preds.true_labels):
        mask = preds.true_labels == cls
        rows.append(
            ClassAccuracy(
                class_id=labels.classes[int(cls)],
                frequency=int(mask.sum()),
                topk=float(hits[mask].mean()),
            )
        )
    return rows


def write_class_freq_csv(rows: list[ClassAccuracy], path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class_id", "frequency", "top5_acc"])
            for row in rows:
                writer.writerow([row.class_id, row.frequency, repr(row.topk)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_submission(preds: PredictionSet, labels: LabelSpace, n: int, path: str | Path) -> None:
    """CSV of each row's top-n raw category ids in rank order."""
    c = preds.scores.shape[1]
    if not 1 <= n <= c:
        raise KOutOfRange(f"n={n} outside [1, {c}]")
    if c != labels.num_classes:
        raise ShapeMismatch(f"{c} score columns for {labels.num_classes} classes")
    top = _ranking(preds.scores, n)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["observation_id"] + [f"rank{i + 1}" for i in range(n)])
            for rid, ranked in zip(preds.row_ids, top):
                writer.writerow([rid] + [labels.classes[int(j)] for j in ranked])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_submission(path: str | Path) -> dict[str, list[str]]:
    """Parse an emitted submission back into id -> ranked category ids."""
    out: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for cells in reader:
            out[cells[0]] = cells[1:]
    return out
