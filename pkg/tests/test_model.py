from __future__ import annotations

import math

import numpy as np
import pytest

from mycoprobe.errors import IndexOutOfRange, MagicMismatch, ShapeMismatch
from mycoprobe.model import (
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
    glorot_uniform,
    head_from_params,
    init_fusion_head,
    init_linear_head,
    init_multi_head,
    load_checkpoint,
    mixup_cross_entropy,
    save_checkpoint,
    softmax_cross_entropy,
)
from mycoprobe.rng import stream_rng

from oracles import finite_difference_grad, max_relative_error, naive_matmul


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def test_linear_zero_params_zero_logits():
    head = LinearHead(W=np.zeros((3, 4)), b=np.zeros(3))
    logits = forward_linear(head, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.array_equal(logits, np.zeros((5, 3)))


def test_linear_scalar_hand_case():
    head = LinearHead(W=np.array([[2.0]]), b=np.array([1.0]))
    assert forward_linear(head, np.array([[3.0]]))[0, 0] == 7.0


def test_linear_matches_naive_matmul(rng):
    for _ in range(5):
        b, d, c = int(rng.integers(1, 6)), int(rng.integers(1, 7)), int(rng.integers(1, 5))
        head = init_linear_head(c, d, seed=int(rng.integers(1000)))
        x = rng.normal(size=(b, d)).astype(np.float32)
        expected = naive_matmul(x, head.W.T.astype(np.float64)) + head.b.astype(np.float64)
        assert np.abs(forward_linear(head, x) - expected).max() < 1e-6


def test_linear_shape_mismatch():
    head = LinearHead(W=np.zeros((2, 3)), b=np.zeros(2))
    with pytest.raises(ShapeMismatch):
        forward_linear(head, np.zeros((4, 5)))


def test_fusion_zero_projection_logits_equal_bias():
    head = init_fusion_head(3, 4, 6, seed=5)
    head.W_img[:] = 0
    head.b_img[:] = 0
    head.W_txt[:] = 0
    head.b_txt[:] = 0
    head.b_out[:] = np.array([1.0, -2.0, 0.25], dtype=np.float32)
    logits = forward_fusion(head, np.ones((2, 4)), np.ones((2, 6)))
    assert np.allclose(logits, np.array([1.0, -2.0, 0.25], dtype=np.float32))


def test_fusion_normalization_three_four_five():
    # hidden row [3, 4, 0, ...] normalizes to [0.6, 0.8, 0, ...]
    head = init_fusion_head(2, 1, 1, seed=1)
    head.W_img[:] = 0
    head.W_txt[:] = 0
    head.b_img[:] = 0
    head.b_txt[:] = 0
    head.b_img[0] = 3.0
    head.b_img[1] = 4.0
    _, hidden = forward_fusion(head, np.zeros((1, 1)), np.zeros((1, 1)), return_hidden=True)
    assert hidden[0, 0] == pytest.approx(0.6, abs=1e-12)
    assert hidden[0, 1] == pytest.approx(0.8, abs=1e-12)
    assert np.all(hidden[0, 2:] == 0)


def test_fusion_hidden_rows_unit_norm(rng):
    head = init_fusion_head(4, 5, 7, seed=2)
    img = rng.normal(size=(6, 5)).astype(np.float32)
    txt = rng.normal(size=(6, 7)).astype(np.float32)
    _, hidden = forward_fusion(head, img, txt, return_hidden=True)
    assert np.allclose(np.linalg.norm(hidden, axis=1), 1.0, atol=1e-12)


def test_fusion_matches_step_by_step_recomputation(rng):
    head = init_fusion_head(3, 4, 6, seed=9)
    img = rng.normal(size=(5, 4)).astype(np.float32)
    txt = rng.normal(size=(5, 6)).astype(np.float32)
    logits = forward_fusion(head, img, txt)
    p_img = img.astype(np.float64) @ head.W_img.T.astype(np.float64) + head.b_img
    p_txt = txt.astype(np.float64) @ head.W_txt.T.astype(np.float64) + head.b_txt
    h = np.concatenate([p_img, p_txt], axis=1)
    h = h / np.linalg.norm(h, axis=1, keepdims=True)
    expected = h @ head.W_out.T.astype(np.float64) + head.b_out
    assert np.abs(logits - expected).max() < 1e-5


def test_multi_forward_shapes_and_poisonous_vector(rng):
    head = init_multi_head(6, {"category": 4, "genus": 3, "species": 5}, seed=3)
    out = forward_multi(head, rng.normal(size=(7, 6)).astype(np.float32))
    assert out["category"].shape == (7, 4)
    assert out["genus"].shape == (7, 3)
    assert out["species"].shape == (7, 5)
    assert out["poisonous"].shape == (7,)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def test_ce_uniform_logits_is_log_c():
    for c in (2, 5, 17):
        logits = np.zeros((3, c))
        loss, _ = softmax_cross_entropy(logits, np.zeros(3, dtype=int))
        assert loss == pytest.approx(math.log(c), rel=1e-12)


def test_ce_confident_correct_is_tiny():
    loss, _ = softmax_cross_entropy(np.array([[10.0, -10.0]]), np.array([0]))
    # closed form: log(1 + exp(-20))
    assert loss == pytest.approx(2.0611536181902037e-9, rel=1e-6)


def test_ce_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=(4, 7))
    targets = rng.integers(0, 7, size=4)
    _, grad = softmax_cross_entropy(logits, targets)
    fd = finite_difference_grad(lambda: softmax_cross_entropy(logits, targets)[0], logits)
    assert max_relative_error(grad, fd) < 1e-4


def test_ce_shift_invariance(rng):
    # adding any constant to every logit in a row changes nothing
    logits = rng.normal(size=(5, 6))
    targets = rng.integers(0, 6, size=5)
    base, _ = softmax_cross_entropy(logits, targets)
    row_shifts = rng.normal(size=(5, 1)) * 50
    shifted, _ = softmax_cross_entropy(logits + row_shifts, targets)
    assert abs(base - shifted) < 1e-6


def test_ce_extreme_logits_stable():
    logits = np.array([[100.0, -100.0], [-100.0, 100.0]])
    loss, grad = softmax_cross_entropy(logits, np.array([0, 0]))
    assert np.isfinite(loss) and np.isfinite(grad).all()


def test_ce_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_bce_logit_zero_is_log_two():
    loss, _ = binary_cross_entropy(np.zeros(4), np.ones(4))
    assert loss == pytest.approx(math.log(2), rel=1e-12)


def test_bce_confident_correct_is_tiny():
    loss, _ = binary_cross_entropy(np.array([20.0]), np.array([1.0]))
    assert loss == pytest.approx(2.0611536181902037e-9, rel=1e-6)


def test_bce_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=9)
    targets = rng.integers(0, 2, size=9).astype(np.float64)
    _, grad = binary_cross_entropy(logits, targets)
    fd = finite_difference_grad(lambda: binary_cross_entropy(logits, targets)[0], logits)
    assert max_relative_error(grad, fd) < 1e-4


def test_bce_extreme_logits_stable():
    loss, grad = binary_cross_entropy(np.array([100.0, -100.0]), np.array([0.0, 1.0]))
    assert np.isfinite(loss) and np.isfinite(grad).all()


def test_mixup_ce_reduces_to_plain_when_lam_one(rng):
    logits = rng.normal(size=(6, 5))
    y = rng.integers(0, 5, size=6)
    y_j = rng.integers(0, 5, size=6)
    plain_loss, plain_grad = softmax_cross_entropy(logits, y)
    mix_loss, mix_grad = mixup_cross_entropy(logits, y, y_j, 1.0)
    assert mix_loss == plain_loss
    assert np.array_equal(mix_grad, plain_grad)


def test_mixup_ce_gradient_matches_finite_differences(rng):
    logits = rng.normal(size=(5, 4))
    y_i = rng.integers(0, 4, size=5)
    y_j = rng.integers(0, 4, size=5)
    for lam in (0.0, 0.3, 0.75, np.linspace(0.1, 0.9, 5)):
        _, grad = mixup_cross_entropy(logits, y_i, y_j, lam)
        fd = finite_difference_grad(lambda: mixup_cross_entropy(logits, y_i, y_j, lam)[0], logits)
        assert max_relative_error(grad, fd) < 1e-4


# ---------------------------------------------------------------------------
# Backward passes
# ---------------------------------------------------------------------------

def test_backward_zero_grad_gives_zero_parameter_grads(rng):
    head = init_linear_head(3, 4, seed=0)
    x = rng.normal(size=(5, 4)).astype(np.float32)
    grads, grad_x = backward_linear(head, x, np.zeros((5, 3)))
    assert np.all(grads["W"] == 0) and np.all(grads["b"] == 0) and np.all(grad_x == 0)


def test_backward_linear_scalar_chain_rule():
    head = LinearHead(W=np.array([[2.0]]), b=np.array([0.0]))
    x = np.array([[3.0]])
    grads, grad_x = backward_linear(head, x, np.array([[5.0]]))
    assert grads["W"][0, 0] == 15.0  # grad_logit * x
    assert grads["b"][0] == 5.0
    assert grad_x[0, 0] == 10.0  # grad_logit * W


def _linear_loss(head, x, y):
    logits = forward_linear(head, x)
    return softmax_cross_entropy(logits, y)[0]


def test_linear_full_model_gradcheck(rng):
    head = init_linear_head(4, 5, seed=8)
    x = rng.normal(size=(6, 5)).astype(np.float32)
    y = rng.integers(0, 4, size=6)
    logits = forward_linear(head, x)
    _, grad_logits = softmax_cross_entropy(logits, y)
    grads, _ = backward_linear(head, x, grad_logits)
    for name, param in head.parameters().items():
        fd = finite_difference_grad(lambda: _linear_loss(head, x, y), param)
        assert max_relative_error(grads[name], fd) < 1e-3, name


def test_fusion_full_model_gradcheck(rng):
    head = init_fusion_head(3, 6, 4, seed=12)
    img = rng.normal(size=(4, 6)).astype(np.float32)
    txt = rng.normal(size=(4, 4)).astype(np.float32)
    y = rng.integers(0, 3, size=4)

    def loss():
        return softmax_cross_entropy(forward_fusion(head, img, txt), y)[0]

    logits = forward_fusion(head, img, txt)
    _, grad_logits = softmax_cross_entropy(logits, y)
    grads = backward_fusion(head, img, txt, grad_logits)
    for name in ("b_img", "b_txt", "b_out"):  # full W tensors are covered in acceptance
        fd = finite_difference_grad(loss, head.parameters()[name])
        assert max_relative_error(grads[name], fd) < 1e-3, name
    for name in ("W_img", "W_txt", "W_out"):
        param = head.parameters()[name]
        flat_fd = finite_difference_grad(loss, param.reshape(-1)[:40])
        assert max_relative_error(grads[name].reshape(-1)[:40], flat_fd) < 1e-3, name


def test_multi_full_model_gradcheck(rng):
    head = init_multi_head(5, {"category": 3, "genus": 2, "species": 4}, seed=4)
    x = rng.normal(size=(4, 5)).astype(np.float32)
    targets = {
        "category": rng.integers(0, 3, size=4),
        "poisonous": rng.integers(0, 2, size=4).astype(np.float64),
    }

    def loss():
        out = forward_multi(head, x)
        ce = softmax_cross_entropy(out["category"], targets["category"])[0]
        bce = binary_cross_entropy(out["poisonous"], targets["poisonous"])[0]
        return ce + bce

    out = forward_multi(head, x)
    _, grad_cat = softmax_cross_entropy(out["category"], targets["category"])
    _, grad_poi = binary_cross_entropy(out["poisonous"], targets["poisonous"])
    grads = backward_multi(head, x, {"category": grad_cat, "poisonous": grad_poi})
    for name in ("W_shared", "b_shared", "category.W", "category.b", "poisonous.W", "poisonous.b"):
        target = dict(head.parameters())[name]
        fd = finite_difference_grad(loss, target)
        assert max_relative_error(grads[name], fd) < 1e-3, name


def test_fusion_backward_zero_hidden_row_passthrough():
    # all projections zero: the normalization is the identity there and the
    # output-layer gradients must still flow
    head = init_fusion_head(2, 3, 3, seed=6)
    head.W_img[:] = 0
    head.b_img[:] = 0
    head.W_txt[:] = 0
    head.b_txt[:] = 0
    grads = backward_fusion(head, np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 2)))
    assert np.isfinite(grads["W_img"]).all()
    assert np.all(grads["W_out"] == 0)  # normalized hidden is the zero vector
    assert np.all(grads["b_out"] == 2.0)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def test_init_biases_zero_weights_bounded():
    head = init_linear_head(7, 12, seed=3)
    assert np.all(head.b == 0)
    bound = math.sqrt(6.0 / (12 + 7))
    assert np.all(np.abs(head.W) <= bound)


def test_init_deterministic():
    a = init_multi_head(6, {"category": 3, "genus": 2, "species": 4}, seed=11)
    b = init_multi_head(6, {"category": 3, "genus": 2, "species": 4}, seed=11)
    for k, v in a.parameters().items():
        assert np.array_equal(v, b.parameters()[k])


def test_glorot_respects_fan(rng):
    w = glorot_uniform((30, 50), stream_rng(0, "g"))
    assert np.abs(w).max() <= math.sqrt(6.0 / 80)
    assert w.dtype == np.float32


def test_multi_head_requires_all_objectives():
    head = init_multi_head(4, {"category": 2, "genus": 2, "species": 2}, seed=0)
    assert set(head.heads) == set(OBJECTIVES)
    with pytest.raises(ShapeMismatch):
        MultiHead(W_shared=head.W_shared, b_shared=head.b_shared, heads={"category": head.heads["category"]})


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_linear(tmp_path):
    head = init_linear_head(4, 9, seed=2)
    meta = {"classes": ["a", "b", "c", "d"], "note": 1}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, head, meta)
    back, back_meta = load_checkpoint(path)
    assert back_meta == meta
    assert back.W.tobytes() == head.W.tobytes()
    assert back.b.tobytes() == head.b.tobytes()


def test_checkpoint_roundtrip_bitwise_all_kinds(tmp_path):
    heads = [
        init_linear_head(3, 5, seed=1),
        init_fusion_head(3, 4, 6, seed=1),
        init_multi_head(5, {"category": 3, "genus": 2, "species": 4}, seed=1),
    ]
    for i, head in enumerate(heads):
        path = tmp_path / f"h{i}.ckpt"
        save_checkpoint(path, head, {})
        back, _ = load_checkpoint(path)
        for name, tensor in head.parameters().items():
            assert back.parameters()[name].tobytes() == tensor.tobytes(), name
        # a second save of the loaded head is byte-identical
        save_checkpoint(tmp_path / f"h{i}b.ckpt", back, {})
        assert (tmp_path / f"h{i}.ckpt").read_bytes() == (tmp_path / f"h{i}b.ckpt").read_bytes()


def test_checkpoint_magic_guard(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX\x00\x00\x00\x00")
    (tmp_path / "bad.ckpt.json").write_text("{\"kind\": \"linear\", \"meta\": {}}")
    with pytest.raises(MagicMismatch):
        load_checkpoint(path)


def test_head_from_params_rejects_unknown_kind():
    with pytest.raises(ValueError):
        head_from_params("conv", {})
