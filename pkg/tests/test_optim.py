from __future__ import annotations

import csv
import json

import numpy as np
import pytest

import mycoprobe as mp
from mycoprobe.augment import MixupConfig
from mycoprobe.dataio import SyntheticSpec, build_label_space, generate_eval_split, generate_synthetic
from mycoprobe.errors import DivergedLoss, EmptyDataset, MissingObjectiveLabels, ShapeMismatch
from mycoprobe.model import (
    backward_linear,
    forward_linear,
    init_linear_head,
    init_multi_head,
    softmax_cross_entropy,
)
from mycoprobe.optim import (
    AdamState,
    GradNormState,
    TrainConfig,
    adam_step,
    gradnorm_step,
    make_bundle,
    train,
    write_trainlog_csv,
    write_trainlog_jsonl,
)
from mycoprobe.sampling import draw_unweighted_epoch


def synthetic_bundle(num_classes=5, dim=768, head=20, tail=2, spread=0.0, seed=7, val_per_class=3):
    spec = SyntheticSpec(
        num_classes=num_classes,
        dim=dim,
        head_count=head,
        tail_count=tail,
        cluster_spread=spread,
        seed=seed,
    )
    table, records = generate_synthetic(spec)
    labels = build_label_space(records)
    val_t, val_r = generate_eval_split(spec, per_class=val_per_class)
    return make_bundle(labels, table, records, val_t, val_r)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    state = AdamState(lr=0.1)
    adam_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(params["w"], np.array([1.0, -2.0], dtype=np.float32))
    assert state.step_count == 1


def test_adam_first_step_hand_value():
    # param 0, grad 1, lr 1e-3, defaults: bias-corrected m=v=1,
    # so the step is lr within epsilon rounding
    params = {"w": np.zeros(1, dtype=np.float64)}
    state = AdamState(lr=1e-3)
    adam_step(params, {"w": np.ones(1)}, state)
    assert abs(params["w"][0] - (-9.99999995e-4)) < 1e-10


def test_adam_identical_tensors_evolve_identically(rng):
    a = {"x": rng.normal(size=(3, 2)).astype(np.float32)}
    b = {"x": a["x"].copy()}
    sa, sb = AdamState(lr=0.01), AdamState(lr=0.01)
    for i in range(20):
        grad = rng.normal(size=(3, 2))
        adam_step(a, {"x": grad}, sa)
        adam_step(b, {"x": grad.copy()}, sb)
        assert np.array_equal(a["x"], b["x"])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2, np.float32)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2, np.float32)}, {"q": np.zeros(2)}, AdamState())


def test_adam_moment_invariants(rng):
    params = {"w": rng.normal(size=4).astype(np.float32)}
    state = AdamState()
    for _ in range(10):
        adam_step(params, {"w": rng.normal(size=4)}, state)
    assert np.all(state.v["w"] >= 0)
    assert state.step_count == 10


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def test_train_separable_reaches_perfect_top1():
    bundle = synthetic_bundle()
    config = TrainConfig(seed=1, max_epochs=50, early_stop_patience=50)
    result = train(bundle, config)
    assert any(rec.val_top1 == 1.0 for rec in result.log.records)


def test_train_defaults_mirror_the_benchmark_recipe():
    config = TrainConfig()
    assert config.batch_size == 256
    assert config.max_epochs == 50
    assert config.early_stop_patience == 3
    assert config.lr == 5e-4


def test_early_stop_constant_validation_halts_at_one_plus_patience():
    # a single class: validation accuracy is 1.0 by construction every epoch
    bundle = synthetic_bundle(num_classes=2, dim=8, head=4, tail=2)
    # make both classes identical so nothing can improve: label space of one
    spec = SyntheticSpec(num_classes=2, dim=8, head_count=4, tail_count=4, cluster_spread=0.0, seed=3)
    table, records = generate_synthetic(spec)
    records = [mp.ObservationRecord(r.observation_id, "only", r.split, r.species, r.genus, r.family, r.poisonous) for r in records]
    labels = build_label_space(records)
    val_t, val_r = generate_eval_split(spec, per_class=2)
    val_r = [mp.ObservationRecord(r.observation_id, "only", r.split, r.species, r.genus, r.family, r.poisonous) for r in val_r]
    bundle = make_bundle(labels, table, records, val_t, val_r)
    for patience in (1, 2, 3, 5):
        config = TrainConfig(seed=0, early_stop_patience=patience, max_epochs=50)
        result = train(bundle, config)
        assert len(result.log) == 1 + patience
        assert result.best_epoch == 1


def test_best_checkpoint_is_argmax_of_log():
    bundle = synthetic_bundle(num_classes=8, dim=16, head=12, tail=2, spread=1.2, seed=5, val_per_class=6)
    config = TrainConfig(seed=2, max_epochs=12, early_stop_patience=12)
    result = train(bundle, config)
    tops = [rec.val_top5 for rec in result.log.records]
    assert result.best_val_top5 == max(tops)
    assert result.best_epoch == int(np.argmax(tops)) + 1
    assert len(result.log) <= result.best_epoch + 12


def test_train_reproducible_bitwise():
    bundle = synthetic_bundle(num_classes=4, dim=12, head=6, tail=2, spread=0.5)
    config = TrainConfig(seed=9, max_epochs=5, early_stop_patience=5, mixup=MixupConfig(alpha=1.3, enabled=True), weighted_sampling=True)
    a = train(bundle, config)
    b = train(bundle, config)
    for name, tensor in a.head.parameters().items():
        assert tensor.tobytes() == b.head.parameters()[name].tobytes()
    assert [r.val_top5 for r in a.log.records] == [r.val_top5 for r in b.log.records]
    assert [r.train_loss for r in a.log.records] == [r.train_loss for r in b.log.records]


def test_train_empty_dataset_rejected():
    bundle = synthetic_bundle(num_classes=2, dim=4, head=3, tail=1)
    bundle.val_images = mp.EmbeddingTable(dim=4, rows=np.zeros((0, 4), np.float32), row_ids=[])
    bundle.val_records = []
    with pytest.raises(EmptyDataset):
        train(bundle, TrainConfig(seed=0))


def test_train_diverged_loss_raises():
    bundle = synthetic_bundle(num_classes=5, dim=8, head=8, tail=2, spread=0.0, seed=2)
    bundle.train_images.rows *= 3e7  # initial misclassified logits blow past 1e6
    bundle.val_images.rows *= 3e7
    with pytest.raises(DivergedLoss):
        train(bundle, TrainConfig(seed=1, max_epochs=3))


def test_plain_loop_equivalence_when_mixup_and_weighting_off():
    # with mixup disabled and unweighted sampling, train() must match a
    # hand-rolled plain mini-batch CE loop built from the same primitives
    bundle = synthetic_bundle(num_classes=3, dim=10, head=5, tail=2, spread=0.4, seed=4)
    config = TrainConfig(seed=6, max_epochs=4, early_stop_patience=4, batch_size=4)
    result = train(bundle, config)

    labels = bundle.labels
    y = labels.indices_for(bundle.train_records)
    head = init_linear_head(labels.num_classes, bundle.train_images.dim, config.seed)
    adam = AdamState(lr=config.lr)
    snapshots = {}
    for epoch in range(1, config.max_epochs + 1):
        plan = draw_unweighted_epoch(len(bundle.train_images), config.batch_size, config.seed, epoch)
        for idx in plan.batches:
            logits = forward_linear(head, bundle.train_images.rows[idx])
            _, grad_logits = softmax_cross_entropy(logits, y[idx])
            grads, _ = backward_linear(head, bundle.train_images.rows[idx], grad_logits)
            adam_step(head.parameters(), grads, adam)
        snapshots[epoch] = {k: v.copy() for k, v in head.parameters().items()}
    # train() returns the best-validation epoch; its parameters must equal
    # the reference loop's snapshot of that same epoch, bitwise
    reference = snapshots[result.best_epoch]
    for name, tensor in result.head.parameters().items():
        assert tensor.tobytes() == reference[name].tobytes(), name


def test_fusion_training_runs_and_improves():
    spec = SyntheticSpec(num_classes=4, dim=16, head_count=10, tail_count=4, cluster_spread=0.3, seed=8)
    table, records = generate_synthetic(spec)
    labels = build_label_space(records)
    val_t, val_r = generate_eval_split(spec, per_class=4)
    # text table: a noisy linear projection of the image features
    rng = np.random.default_rng(0)
    proj = rng.normal(size=(16, 24))
    text = mp.EmbeddingTable(dim=24, rows=(table.rows @ proj).astype(np.float32), row_ids=table.row_ids)
    val_text = mp.EmbeddingTable(dim=24, rows=(val_t.rows @ proj).astype(np.float32), row_ids=val_t.row_ids)
    bundle = make_bundle(labels, table, records, val_t, val_r, text, val_text)
    config = TrainConfig(seed=3, max_epochs=10, early_stop_patience=10, use_text=True)
    result = train(bundle, config)
    assert result.kind == "fusion"
    assert result.log.records[-1].val_top5 >= result.log.records[0].val_top5 or result.best_val_top5 == 1.0


def test_multi_objective_training_records_task_weights():
    bundle = synthetic_bundle(num_classes=6, dim=12, head=8, tail=2, spread=0.3, seed=9)
    config = TrainConfig(
        seed=1,
        max_epochs=3,
        early_stop_patience=3,
        objectives=("category", "poisonous", "genus", "species"),
    )
    result = train(bundle, config)
    assert result.kind == "multi"
    for rec in result.log.records:
        weights = rec.task_weights
        assert set(weights) == {"category", "poisonous", "genus", "species"}
        assert all(w > 0 for w in weights.values())
        assert sum(weights.values()) == pytest.approx(4.0, abs=1e-9)


def test_multi_objective_missing_labels_raises():
    bundle = synthetic_bundle(num_classes=3, dim=6, head=4, tail=2)
    stripped = [
        mp.ObservationRecord(r.observation_id, r.category_id, r.split, None, None, None, None)
        for r in bundle.train_records
    ]
    bundle.train_records = stripped
    config = TrainConfig(seed=0, objectives=("category", "poisonous"))
    with pytest.raises(MissingObjectiveLabels):
        train(bundle, config)


# ---------------------------------------------------------------------------
# GradNorm
# ---------------------------------------------------------------------------

def multi_fixture(rng, objectives=("category", "poisonous", "genus", "species")):
    head = init_multi_head(6, {"category": 4, "genus": 3, "species": 5}, seed=2)
    features = rng.normal(size=(8, 6)).astype(np.float32)
    targets = {
        "category": rng.integers(0, 4, size=8),
        "genus": rng.integers(0, 3, size=8),
        "species": rng.integers(0, 5, size=8),
        "poisonous": rng.integers(0, 2, size=8).astype(np.float64),
    }
    state = GradNormState(objectives=objectives)
    return head, features, {k: targets[k] for k in objectives}, state


def test_gradnorm_weights_positive_and_sum_t(rng):
    head, features, targets, state = multi_fixture(rng)
    adam_model, adam_weights = AdamState(lr=1e-3), AdamState(lr=1e-3)
    for _ in range(200):
        gradnorm_step(head, features, targets, state, adam_model, adam_weights)
        assert np.all(state.task_weights >= 1e-4)
        assert state.task_weights.sum() == pytest.approx(4.0, abs=1e-9)


def test_gradnorm_duplicated_objective_symmetry(rng):
    # category and species configured identically: same label space, same
    # targets, bitwise-equal initial head parameters
    head, features, targets, _ = multi_fixture(rng)
    head.heads["species"].W = head.heads["category"].W.copy()
    head.heads["species"].b = head.heads["category"].b.copy()
    targets = {
        "category": targets["category"],
        "species": targets["category"].copy(),
    }
    state = GradNormState(objectives=("category", "species"))
    adam_model, adam_weights = AdamState(lr=1e-3), AdamState(lr=1e-3)
    for _ in range(200):
        info = gradnorm_step(head, features, targets, state, adam_model, adam_weights)
        assert abs(state.task_weights[0] - state.task_weights[1]) < 1e-6
        assert abs(info.losses["category"] - info.losses["species"]) < 1e-9


def test_gradnorm_gamma_zero_targets_equal_mean_norm(rng):
    head, features, targets, _ = multi_fixture(rng)
    state = GradNormState(objectives=("category", "poisonous", "genus", "species"), gamma=0.0)
    info = gradnorm_step(head, features, targets, state, AdamState(), AdamState())
    assert np.allclose(info.target_norms, info.gnorms.mean())


def test_gradnorm_initial_losses_frozen_after_first_step(rng):
    head, features, targets, state = multi_fixture(rng)
    adam_model, adam_weights = AdamState(lr=1e-2), AdamState(lr=1e-2)
    gradnorm_step(head, features, targets, state, adam_model, adam_weights)
    first = state.initial_losses.copy()
    for _ in range(5):
        gradnorm_step(head, features, targets, state, adam_model, adam_weights)
    assert np.array_equal(state.initial_losses, first)


# ---------------------------------------------------------------------------
# Logs
# ---------------------------------------------------------------------------

def test_trainlog_serialization(tmp_path):
    bundle = synthetic_bundle(num_classes=3, dim=8, head=4, tail=2, spread=0.2)
    result = train(bundle, TrainConfig(seed=5, max_epochs=3, early_stop_patience=3))
    csv_path, jsonl_path = tmp_path / "log.csv", tmp_path / "log.jsonl"
    write_trainlog_csv(result.log, csv_path)
    write_trainlog_jsonl(result.log, jsonl_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["epoch"] for r in rows] == [str(rec.epoch) for rec in result.log.records]
    assert list(rows[0]) == ["epoch", "train_loss", "val_top5", "w_category", "w_poisonous", "w_genus", "w_species", "seconds"]
    assert float(rows[0]["val_top5"]) == result.log.records[0].val_top5
    lines = [json.loads(line) for line in jsonl_path.read_text().splitlines()]
    assert lines[0]["epoch"] == 1 and "val_top1" in lines[0]
