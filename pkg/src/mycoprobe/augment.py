"""Feature-level mixup: Beta-distributed convex mixing of embedding batches.

A batch is mixed with a shuffled copy of itself: one mixing coefficient is
drawn from Beta(alpha, alpha), a permutation pairs each row with a partner,
and the loss interpolates between the two label vectors with the same
coefficient. Mixing happens on embeddings, not raw inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, NonFiniteValue, NonPositiveAlpha, ShapeMismatch


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 1.0
    enabled: bool = True
    # draw one coefficient per row instead of per batch (off by default;
    # the training loop handles the per-sample loss weighting)
    per_sample: bool = False

    def __post_init__(self):
        if self.enabled and self.alpha <= 0:
            raise NonPositiveAlpha(f"alpha must be > 0, got {self.alpha}")


@dataclass
class MixupBatch:
    """A mixed feature matrix plus everything needed to weight the loss."""

    mixed_features: np.ndarray
    labels_i: np.ndarray
    labels_j: np.ndarray
    lam: float | np.ndarray
    permutation: np.ndarray


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One draw from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mix_batch(
    features: np.ndarray,
    labels: np.ndarray,
    config: MixupConfig,
    rng: np.random.Generator | None = None,
    lam: float | np.ndarray | None = None,
    permutation: np.ndarray | None = None,
) -> MixupBatch:
    """Mix a batch with a shuffled copy of itself.

    The coefficient is drawn first, then the permutation, both from ``rng``;
    either can be pinned explicitly (used by fusion training to mix image
    and text features identically, and by tests). Mixing uses the form
    x_j + lam * (x_i - x_j), so a self-pairing leaves rows bitwise unchanged.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise EmptyBatch(f"features must be a non-empty matrix, got shape {features.shape}")
    if labels.shape[0] != features.shape[0]:
        raise ShapeMismatch(f"{labels.shape[0]} labels for {features.shape[0]} rows")
    if not np.isfinite(features).all():
        raise NonFiniteValue("batch features contain NaN or infinity")
    b = features.shape[0]
    x_i = features.astype(np.float64, copy=False)

    if not config.enabled:
        return MixupBatch(
            mixed_features=x_i.copy(),
            labels_i=labels,
            labels_j=labels.copy(),
            lam=1.0,
            permutation=np.arange(b),
        )

    if lam is None:
        if rng is None:
            raise ValueError("rng is required unless lam and permutation are pinned")
        if config.per_sample:
            lam = rng.beta(config.alpha, config.alpha, size=b)
        else:
            lam = sample_lambda(config.alpha, rng)
    if permutation is None:
        if rng is None:
            raise ValueError("rng is required unless lam and permutation are pinned")
        permutation = rng.permutation(b)
    permutation = np.asarray(permutation, dtype=np.int64)

    x_j = x_i[permutation]
    lam_col = lam[:, None] if isinstance(lam, np.ndarray) else lam
    mixed = x_j + lam_col * (x_i - x_j)
    return MixupBatch(
        mixed_features=mixed,
        labels_i=labels,
        labels_j=labels[permutation],
        lam=lam,
        permutation=permutation,
    )


def mixup_loss(per_target_loss, predictions: np.ndarray, batch: MixupBatch) -> float:
    """lam * L(pred, labels_i) + (1 - lam) * L(pred, labels_j).

    ``per_target_loss`` maps (predictions, targets) to a scalar. For
    per-sample coefficients use model.mixup_cross_entropy, which weights
    each row's loss individually.
    """
    predictions = np.asarray(predictions)
    if predictions.shape[0] != batch.labels_i.shape[0]:
        raise ShapeMismatch(
            f"{predictions.shape[0]} prediction rows for {batch.labels_i.shape[0]} labels"
        )
    if isinstance(batch.lam, np.ndarray):
        raise ValueError("per-sample lam needs a per-sample loss; see mixup_cross_entropy")
    lam = float(batch.lam)
    return lam * float(per_target_loss(predictions, batch.labels_i)) + (1.0 - lam) * float(
        per_target_loss(predictions, batch.labels_j)
    )
