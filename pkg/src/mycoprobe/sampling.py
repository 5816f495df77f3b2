"""Inverse-class-frequency weighted sampling and reproducible batch plans.

Weighted epochs draw N indices with replacement (N = dataset size) with
probability proportional to the row weights, so every class is seen equally
often in expectation. Draws use the inverse-CDF over the cumulative weight
array, which keeps the stream auditable and platform-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import LabelSpace
from .errors import UnknownClassIndex
from .rng import stream_rng


@dataclass
class SampleWeights:
    """Per-row positive weights, equal within a class."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if not (self.weights > 0).all():
            raise ValueError("every sample weight must be > 0")

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass
class BatchPlan:
    """Index batches for one epoch; the last batch may be short."""

    epoch_index: int
    batches: list[np.ndarray]

    def total_indices(self) -> int:
        return sum(len(b) for b in self.batches)


def compute_sample_weights(labels: LabelSpace, row_classes: np.ndarray) -> SampleWeights:
    """Balanced weights w(c) = N / (C * count(c)) per row."""
    row_classes = np.asarray(row_classes, dtype=np.int64)
    c = labels.num_classes
    if row_classes.size and (row_classes.min() < 0 or row_classes.max() >= c):
        bad = row_classes[(row_classes < 0) | (row_classes >= c)][0]
        raise UnknownClassIndex(f"class index {bad} outside [0, {c})")
    n = int(labels.counts.sum())
    weights = n / (c * labels.counts[row_classes].astype(np.float64))
    return SampleWeights(weights=weights)


def _batchify(indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]


def draw_epoch(weights: SampleWeights, batch_size: int, seed: int, epoch_index: int) -> BatchPlan:
    """Draw N indices i.i.d. with replacement, probability proportional to weight.

    The weights are normalized before drawing, so scaling them all by a
    constant leaves the plan unchanged. Deterministic in (seed, epoch_index).
    """
    n = len(weights)
    prob = weights.weights / weights.weights.sum()
    cum = np.cumsum(prob)
    cum[-1] = 1.0
    rng = stream_rng(seed, "sampler", epoch_index)
    uniforms = rng.random(n)
    indices = np.searchsorted(cum, uniforms, side="right").astype(np.int64)
    return BatchPlan(epoch_index=epoch_index, batches=_batchify(indices, batch_size))


def draw_unweighted_epoch(n: int, batch_size: int, seed: int, epoch_index: int) -> BatchPlan:
    """Uniform shuffle without replacement, partitioned into batches."""
    rng = stream_rng(seed, "sampler", epoch_index)
    indices = rng.permutation(n).astype(np.int64)
    return BatchPlan(epoch_index=epoch_index, batches=_batchify(indices, batch_size))
