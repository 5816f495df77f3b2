"""Adam, the training loop with early stopping, and GradNorm loss balancing.

The loop mirrors the benchmark recipe: weighted or uniform batch plans,
optional feature-level mixup, softmax cross-entropy (binary for the
poisonous objective), Adam with a constant learning rate, and early
stopping on validation top-5 with the best-epoch checkpoint returned.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .augment import MixupConfig, mix_batch
from .dataio import EmbeddingTable, LabelSpace, ObservationRecord, align_records
from .errors import (
    DivergedLoss,
    EmptyDataset,
    IoFailure,
    MissingObjectiveLabels,
    ShapeMismatch,
)
from .metrics import PredictionSet, topk_accuracy
from .model import (
    FusionHead,
    LinearHead,
    MultiHead,
    OBJECTIVES,
    backward_fusion,
    backward_linear,
    backward_multi,
    binary_cross_entropy,
    forward_fusion,
    forward_linear,
    forward_multi,
    head_from_params,
    head_kind,
    init_fusion_head,
    init_linear_head,
    init_multi_head,
    mixup_cross_entropy,
    shared_gradient_norm,
)
from .rng import stream_rng
from .sampling import compute_sample_weights, draw_epoch, draw_unweighted_epoch

DIVERGENCE_THRESHOLD = 1e6
MIN_TASK_WEIGHT = 1e-4


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for a named parameter set."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update, in place. Keys absent from ``grads`` are untouched.

    Moments are kept in float64; each parameter keeps its own dtype.
    """
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for key, grad in grads.items():
        if key not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {key!r}")
        param = params[key]
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeMismatch(f"{key}: grad {grad.shape} vs param {param.shape}")
        m = state.m.setdefault(key, np.zeros(param.shape, dtype=np.float64))
        v = state.v.setdefault(key, np.zeros(param.shape, dtype=np.float64))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        step = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        param[...] = (param.astype(np.float64) - step).astype(param.dtype)


# ---------------------------------------------------------------------------
# Configuration and logs
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 50
    early_stop_patience: int = 3
    lr: float = 5e-4
    seed: int = 0
    mixup: MixupConfig = field(default_factory=lambda: MixupConfig(alpha=1.0, enabled=False))
    weighted_sampling: bool = False
    objectives: tuple[str, ...] = ("category",)
    use_text: bool = False
    gradnorm_gamma: float = 1.5

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.max_epochs < 1:
            raise ValueError("need early_stop_patience >= 1 and max_epochs >= 1")
        self.objectives = tuple(self.objectives)
        unknown = set(self.objectives) - set(OBJECTIVES)
        if unknown:
            raise ValueError(f"unknown objectives {sorted(unknown)}")
        if "category" not in self.objectives:
            raise ValueError("objectives must include category (the evaluated target)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_top5: float
    task_weights: dict[str, float] | None
    seconds: float
    val_top1: float = float("nan")


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


_LOG_COLUMNS = ("epoch", "train_loss", "val_top5", "w_category", "w_poisonous", "w_genus", "w_species", "seconds")


def write_trainlog_csv(log: TrainLog, path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_LOG_COLUMNS)
            for rec in log.records:
                weights = rec.task_weights or {}
                writer.writerow(
                    [
                        rec.epoch,
                        repr(rec.train_loss),
                        repr(rec.val_top5),
                        *(repr(weights[o]) if o in weights else "" for o in OBJECTIVES),
                        f"{rec.seconds:.6f}",
                    ]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_trainlog_jsonl(log: TrainLog, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in log.records:
                fh.write(json.dumps(asdict(rec)) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Data bundle
# ---------------------------------------------------------------------------

@dataclass
class DataBundle:
    """Aligned train/val tables and records; build via make_bundle."""

    labels: LabelSpace
    train_images: EmbeddingTable
    train_records: list[ObservationRecord]
    val_images: EmbeddingTable
    val_records: list[ObservationRecord]
    train_text: EmbeddingTable | None = None
    val_text: EmbeddingTable | None = None


def _reorder_text(text: EmbeddingTable, row_ids: list[str]) -> EmbeddingTable:
    index = {rid: i for i, rid in enumerate(text.row_ids)}
    missing = [rid for rid in row_ids if rid not in index]
    if missing:
        raise ShapeMismatch(f"text table lacks rows {missing[:3]}...")
    order = np.array([index[rid] for rid in row_ids], dtype=np.int64)
    return EmbeddingTable(dim=text.dim, rows=text.rows[order], row_ids=list(row_ids))


def make_bundle(
    labels: LabelSpace,
    train_images: EmbeddingTable,
    train_records: list[ObservationRecord],
    val_images: EmbeddingTable,
    val_records: list[ObservationRecord],
    train_text: EmbeddingTable | None = None,
    val_text: EmbeddingTable | None = None,
) -> DataBundle:
    """Align records (and optional text tables) to image row order."""
    train_records = align_records(train_images, train_records)
    val_records = align_records(val_images, val_records)
    if train_text is not None:
        train_text = _reorder_text(train_text, train_images.row_ids)
    if val_text is not None:
        val_text = _reorder_text(val_text, val_images.row_ids)
    return DataBundle(
        labels=labels,
        train_images=train_images,
        train_records=train_records,
        val_images=val_images,
        val_records=val_records,
        train_text=train_text,
        val_text=val_text,
    )


def _objective_spaces(records: list[ObservationRecord]) -> dict[str, list[str]]:
    genera = sorted({r.genus for r in records if r.genus is not None})
    species = sorted({r.species for r in records if r.species is not None})
    return {"genus": genera, "species": species}


def _objective_targets(
    records: list[ObservationRecord],
    objectives: tuple[str, ...],
    labels: LabelSpace,
    spaces: dict[str, list[str]],
) -> dict[str, np.ndarray]:
    targets: dict[str, np.ndarray] = {"category": labels.indices_for(records)}
    for name in ("genus", "species"):
        if name not in objectives:
            continue
        index = {v: i for i, v in enumerate(spaces[name])}
        values = np.empty(len(records), dtype=np.int64)
        for i, rec in enumerate(records):
            raw = getattr(rec, name)
            if raw is None or raw not in index:
                raise MissingObjectiveLabels(
                    f"record {rec.observation_id!r} lacks a known {name} label"
                )
            values[i] = index[raw]
        targets[name] = values
    if "poisonous" in objectives:
        flags = np.empty(len(records), dtype=np.float64)
        for i, rec in enumerate(records):
            if rec.poisonous is None:
                raise MissingObjectiveLabels(
                    f"record {rec.observation_id!r} lacks a poisonous flag"
                )
            flags[i] = 1.0 if rec.poisonous else 0.0
        targets["poisonous"] = flags
    return targets


# ---------------------------------------------------------------------------
# GradNorm
# ---------------------------------------------------------------------------

@dataclass
class GradNormState:
    """Learnable per-objective loss weights, renormalized to sum to T."""

    objectives: tuple[str, ...]
    gamma: float = 1.5
    task_weights: np.ndarray = None  # type: ignore[assignment]
    initial_losses: np.ndarray | None = None

    def __post_init__(self):
        if self.task_weights is None:
            self.task_weights = np.ones(len(self.objectives), dtype=np.float64)

    def weights_by_name(self) -> dict[str, float]:
        return {o: float(w) for o, w in zip(self.objectives, self.task_weights)}


@dataclass
class GradNormStepInfo:
    losses: dict[str, float]
    gnorms: np.ndarray
    target_norms: np.ndarray
    total_loss: float


def _objective_loss(
    name: str,
    logits: np.ndarray,
    y_i: np.ndarray,
    y_j: np.ndarray,
    lam: float | np.ndarray,
) -> tuple[float, np.ndarray]:
    if name == "poisonous":
        loss_i, grad_i = binary_cross_entropy(logits, y_i)
        loss_j, grad_j = binary_cross_entropy(logits, y_j)
        lam_f = float(lam) if np.isscalar(lam) else None
        if lam_f is None:
            raise ValueError("per-sample mixup is not supported for the poisonous objective")
        return lam_f * loss_i + (1.0 - lam_f) * loss_j, lam_f * grad_i + (1.0 - lam_f) * grad_j
    return mixup_cross_entropy(logits, y_i, y_j, lam)


def gradnorm_step(
    head: MultiHead,
    features: np.ndarray,
    targets: dict[str, np.ndarray],
    state: GradNormState,
    adam_model: AdamState,
    adam_weights: AdamState,
    targets_j: dict[str, np.ndarray] | None = None,
    lam: float = 1.0,
) -> GradNormStepInfo:
    """One multi-objective step with GradNorm weight balancing.

    Per objective: loss and logit gradient; task gradient norm taken over the
    shared trunk weights; inverse training rates from the first step's
    losses; weight gradients from the L1 gap between each norm and its
    target; weights Adam-updated, clamped positive, renormalized to sum T.
    Model parameters update from the weighted total loss using the weights
    as they were when the batch was scored.
    """
    t = len(state.objectives)
    out = forward_multi(head, features)
    losses = np.empty(t)
    grad_logits: dict[str, np.ndarray] = {}
    for i, name in enumerate(state.objectives):
        y_i = targets[name]
        y_j = targets_j[name] if targets_j is not None else y_i
        losses[i], grad_logits[name] = _objective_loss(name, out[name], y_i, y_j, lam)

    weights = state.task_weights.copy()
    gnorms = np.array(
        [
            weights[i] * shared_gradient_norm(head, features, grad_logits[name], name)
            for i, name in enumerate(state.objectives)
        ]
    )
    if state.initial_losses is None:
        state.initial_losses = np.maximum(losses, 1e-12)
    ratios = losses / state.initial_losses
    inverse_rates = ratios / ratios.mean()
    mean_norm = gnorms.mean()
    target_norms = mean_norm * inverse_rates**state.gamma

    # d|G_k - target_k|/dw_k with G_k = w_k * ||grad L_k||, targets constant
    weight_grad = np.sign(gnorms - target_norms) * np.where(weights > 0, gnorms / weights, 0.0)
    adam_step({"w": state.task_weights}, {"w": weight_grad}, adam_weights)
    np.clip(state.task_weights, MIN_TASK_WEIGHT, None, out=state.task_weights)
    state.task_weights *= t / state.task_weights.sum()

    scaled = {name: weights[i] * grad_logits[name] for i, name in enumerate(state.objectives)}
    grads = backward_multi(head, features, scaled)
    adam_step(head.parameters(), grads, adam_model)

    total = float((weights * losses).sum())
    return GradNormStepInfo(
        losses={name: float(losses[i]) for i, name in enumerate(state.objectives)},
        gnorms=gnorms,
        target_norms=target_norms,
        total_loss=total,
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    head: LinearHead | FusionHead | MultiHead
    kind: str
    log: TrainLog
    best_epoch: int
    best_val_top5: float
    aux_spaces: dict[str, list[str]] = field(default_factory=dict)


def predict(head, images: np.ndarray, text: np.ndarray | None = None) -> np.ndarray:
    """Category scores for a batch of rows, whatever the head shape."""
    kind = head_kind(head)
    if kind == "linear":
        return forward_linear(head, images)
    if kind == "fusion":
        if text is None:
            raise ShapeMismatch("fusion heads need text features")
        return forward_fusion(head, images, text)
    return forward_multi(head, images)["category"]


def _check_finite_loss(loss: float, epoch: int) -> None:
    if not np.isfinite(loss) or abs(loss) > DIVERGENCE_THRESHOLD:
        raise DivergedLoss(f"training loss {loss!r} at epoch {epoch}")


def train(bundle: DataBundle, config: TrainConfig) -> TrainResult:
    """Train a head on frozen embeddings and return the best-validation checkpoint.

    Per epoch: draw a batch plan (inverse-frequency weighted when configured),
    optionally mix each batch at the feature level, take an Adam step per
    batch, then score validation top-k (k = min(5, C)). Stops when the
    monitor has not improved for ``early_stop_patience`` consecutive epochs.
    """
    if len(bundle.train_images) == 0 or len(bundle.val_images) == 0:
        raise EmptyDataset("train and validation tables must be non-empty")
    labels = bundle.labels
    n = len(bundle.train_images)
    k_monitor = min(5, labels.num_classes)

    multi = set(config.objectives) != {"category"}
    spaces = _objective_spaces(bundle.train_records) if multi else {"genus": [], "species": []}
    train_targets = _objective_targets(bundle.train_records, config.objectives, labels, spaces)
    val_true = labels.indices_for(bundle.val_records)
    train_classes = train_targets["category"]

    if config.use_text:
        if bundle.train_text is None or bundle.val_text is None:
            raise EmptyDataset("use_text requires text embedding tables")
        if multi:
            raise ValueError("text fusion and multi-objective heads cannot be combined")
        kind = "fusion"
        head = init_fusion_head(labels.num_classes, bundle.train_images.dim, bundle.train_text.dim, config.seed)
    elif multi:
        kind = "multi"
        head = init_multi_head(
            bundle.train_images.dim,
            {
                "category": labels.num_classes,
                "genus": max(1, len(spaces["genus"])),
                "species": max(1, len(spaces["species"])),
            },
            config.seed,
        )
    else:
        kind = "linear"
        head = init_linear_head(labels.num_classes, bundle.train_images.dim, config.seed)

    adam = AdamState(lr=config.lr)
    gn_state = GradNormState(objectives=config.objectives, gamma=config.gradnorm_gamma) if multi else None
    adam_weights = AdamState(lr=config.lr) if multi else None

    weights = compute_sample_weights(labels, train_classes) if config.weighted_sampling else None

    log = TrainLog()
    best_params: dict[str, np.ndarray] | None = None
    best_top5 = -np.inf
    best_epoch = 0
    epochs_since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        if weights is not None:
            plan = draw_epoch(weights, config.batch_size, config.seed, epoch)
        else:
            plan = draw_unweighted_epoch(n, config.batch_size, config.seed, epoch)

        loss_sum = 0.0
        for batch_index, idx in enumerate(plan.batches):
            feats = bundle.train_images.rows[idx]
            y = train_classes[idx]
            rng = stream_rng(config.seed, "mixup", epoch, batch_index)
            mixed = mix_batch(feats, y, config.mixup, rng)

            if kind == "linear":
                logits = forward_linear(head, mixed.mixed_features)
                loss, grad_logits = mixup_cross_entropy(logits, mixed.labels_i, mixed.labels_j, mixed.lam)
                grads, _ = backward_linear(head, mixed.mixed_features, grad_logits)
                adam_step(head.parameters(), grads, adam)
            elif kind == "fusion":
                txt = bundle.train_text.rows[idx]
                mixed_txt = mix_batch(txt, y, config.mixup, rng=None, lam=mixed.lam, permutation=mixed.permutation)
                logits = forward_fusion(head, mixed.mixed_features, mixed_txt.mixed_features)
                loss, grad_logits = mixup_cross_entropy(logits, mixed.labels_i, mixed.labels_j, mixed.lam)
                grads = backward_fusion(head, mixed.mixed_features, mixed_txt.mixed_features, grad_logits)
                adam_step(head.parameters(), grads, adam)
            else:
                batch_targets = {name: train_targets[name][idx] for name in config.objectives}
                targets_j = {name: train_targets[name][idx][mixed.permutation] for name in config.objectives}
                if isinstance(mixed.lam, np.ndarray):
                    raise ValueError("per-sample mixup is not supported with multiple objectives")
                info = gradnorm_step(
                    head,
                    mixed.mixed_features,
                    batch_targets,
                    gn_state,
                    adam,
                    adam_weights,
                    targets_j=targets_j,
                    lam=float(mixed.lam),
                )
                loss = info.total_loss

            _check_finite_loss(loss, epoch)
            loss_sum += loss * len(idx)

        train_loss = loss_sum / plan.total_indices()
        val_text = bundle.val_text.rows if bundle.val_text is not None else None
        scores = predict(head, bundle.val_images.rows, val_text)
        val_preds = PredictionSet(
            scores=scores, row_ids=bundle.val_images.row_ids, true_labels=val_true
        )
        top5 = topk_accuracy(val_preds, k_monitor)
        log.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_top5=top5,
                task_weights=gn_state.weights_by_name() if gn_state is not None else None,
                seconds=time.perf_counter() - started,
                val_top1=topk_accuracy(val_preds, 1),
            )
        )

        if top5 > best_top5:
            best_top5 = top5
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in head.parameters().items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.early_stop_patience:
                break

    assert best_params is not None
    return TrainResult(
        head=head_from_params(kind, best_params),
        kind=kind,
        log=log,
        best_epoch=best_epoch,
        best_val_top5=float(best_top5),
        aux_spaces=spaces if multi else {},
    )


def evaluate_checkpoint(
    head,
    images: EmbeddingTable,
    records: list[ObservationRecord],
    labels: LabelSpace,
    k: int = 5,
    text: EmbeddingTable | None = None,
) -> float:
    """Top-k accuracy of a trained head on an aligned table."""
    records = align_records(images, records)
    scores = predict(head, images.rows, text.rows if text is not None else None)
    preds = PredictionSet(scores=scores, row_ids=images.row_ids, true_labels=labels.indices_for(records))
    return topk_accuracy(preds, k)
