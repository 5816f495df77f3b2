"""Experiment runners: ablation grids and mixing-coefficient sweeps.

Each runner trains one configuration per grid entry with a shared data
bundle and emits a CSV report. Reports carry the published leaderboard
reference scores for configurations that have them, clearly separated from
locally computed numbers, because the published runs used a dataset and
pretrained encoders this package does not ship.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .augment import MixupConfig
from .errors import IoFailure, MycoprobeError, NonPositiveAlpha
from .metrics import ClassAccuracy, PredictionSet, per_class_topk, topk_accuracy
from .optim import DataBundle, TrainConfig, TrainLog, predict, train

# Published top-5 scores (public %, private %) for the named configurations.
REFERENCE_TOP5 = {
    "baseline": (48.672, 43.078),
    "weighted": (50.442, 44.372),
    "mixup-a2.00": (46.460, 40.750),
    "mixup-a1.20": (52.654, 44.760),
    "mixup-a1.45": (52.654, 47.347),
    "mixup-a2.00+weighted": (49.557, 45.407),
    "mixup-a1.20+weighted": (50.884, 46.830),
    "mixup-a1.45+weighted": (53.982, 46.054),
    "text-modernbert": (46.460, 38.421),
    "text-biobert": (45.132, 40.620),
    "gradnorm+weighted": (42.920, 39.197),
    "text+gradnorm+weighted": (39.823, 36.093),
}


@dataclass
class AblationResult:
    name: str
    config_digest: str
    val_top5: float
    per_class: list[ClassAccuracy]
    log: TrainLog
    test_top5: float | None = None


def config_digest(config: TrainConfig) -> str:
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _evaluate(bundle: DataBundle, result_head, k: int) -> tuple[float, list[ClassAccuracy]]:
    val_text = bundle.val_text.rows if bundle.val_text is not None else None
    scores = predict(result_head, bundle.val_images.rows, val_text)
    preds = PredictionSet(
        scores=scores,
        row_ids=bundle.val_images.row_ids,
        true_labels=bundle.labels.indices_for(bundle.val_records),
    )
    k = min(k, bundle.labels.num_classes)
    return topk_accuracy(preds, k), per_class_topk(preds, k, bundle.labels)


def run_ablation(
    grid: list[tuple[str, TrainConfig]],
    bundle: DataBundle,
    k: int = 5,
) -> list[AblationResult]:
    """One training run per named configuration, deterministic per config seed."""
    results = []
    for name, config in grid:
        try:
            outcome = train(bundle, config)
        except MycoprobeError as exc:
            raise type(exc)(f"run {name!r}: {exc}") from exc
        top5, per_class = _evaluate(bundle, outcome.head, k)
        results.append(
            AblationResult(
                name=name,
                config_digest=config_digest(config),
                val_top5=top5,
                per_class=per_class,
                log=outcome.log,
            )
        )
    return results


def write_ablation_csv(results: list[AblationResult], grid: list[tuple[str, TrainConfig]], path: str | Path) -> None:
    configs = dict(grid)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["run", "alpha", "weighted", "objectives", "val_top5", "test_top5", "ref_public", "ref_private"]
            )
            for res in results:
                config = configs[res.name]
                reference = REFERENCE_TOP5.get(res.name)
                writer.writerow(
                    [
                        res.name,
                        repr(config.mixup.alpha) if config.mixup.enabled else "",
                        int(config.weighted_sampling),
                        "+".join(config.objectives),
                        repr(res.val_top5),
                        repr(res.test_top5) if res.test_top5 is not None else "",
                        repr(reference[0]) if reference else "",
                        repr(reference[1]) if reference else "",
                    ]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def default_alpha_grid(start: float = 0.1, stop: float = 2.0, step: float = 0.05) -> list[float]:
    """The sweep grid: start..stop inclusive, plus the tuned 1.20 and 1.45."""
    count = int(round((stop - start) / step))
    values = {round(start + i * step, 10) for i in range(count + 1)}
    values.update((1.20, 1.45))
    return sorted(values)


def sweep_alpha(
    alphas: list[float],
    base_config: TrainConfig,
    bundle: DataBundle,
    k: int = 5,
) -> list[tuple[float, float, float]]:
    """Train once per mixing concentration with identical seed and data.

    Returns (alpha, val_top1, val_topk) rows.
    """
    for alpha in alphas:
        if alpha <= 0:
            raise NonPositiveAlpha(f"alpha must be > 0, got {alpha}")
    rows = []
    for alpha in alphas:
        config = dataclasses.replace(
            base_config, mixup=MixupConfig(alpha=alpha, enabled=True, per_sample=base_config.mixup.per_sample)
        )
        outcome = train(bundle, config)
        val_text = bundle.val_text.rows if bundle.val_text is not None else None
        scores = predict(outcome.head, bundle.val_images.rows, val_text)
        preds = PredictionSet(
            scores=scores,
            row_ids=bundle.val_images.row_ids,
            true_labels=bundle.labels.indices_for(bundle.val_records),
        )
        top1 = topk_accuracy(preds, 1)
        topk = topk_accuracy(preds, min(k, bundle.labels.num_classes))
        rows.append((alpha, top1, topk))
    return rows


def write_alpha_sweep_csv(rows: list[tuple[float, float, float]], path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "val_top1", "val_top5"])
            for alpha, top1, top5 in rows:
                writer.writerow([repr(float(alpha)), repr(top1), repr(top5)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def tail_class_topk(per_class: list[ClassAccuracy], max_count: int = 3) -> float:
    """Count-weighted top-k accuracy over classes with at most max_count images."""
    tail = [row for row in per_class if row.frequency <= max_count]
    if not tail:
        return float("nan")
    total = sum(row.frequency for row in tail)
    return sum(row.topk * row.frequency for row in tail) / total
