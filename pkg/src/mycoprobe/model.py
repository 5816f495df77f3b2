"""Classifier heads over frozen embeddings, with hand-coded gradients.

Three head shapes: a plain linear probe, an image+text fusion head (two
256-wide projections, concatenated, L2-normalized, then classified), and a
multi-objective head (shared 256-wide trunk with one linear head per
objective). Parameters are float32; all forward/backward arithmetic runs in
float64 so gradient checks against finite differences are tight.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    IndexOutOfRange,
    IoFailure,
    MagicMismatch,
    NonFiniteOutput,
    ShapeMismatch,
)
from .rng import stream_rng

FUSION_HIDDEN = 256
TRUNK_WIDTH = 256
OBJECTIVES = ("category", "poisonous", "genus", "species")

CKPT_MAGIC = b"CKP1"


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------

@dataclass
class LinearHead:
    W: np.ndarray  # (C, d)
    b: np.ndarray  # (C,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float32)
        self.b = np.asarray(self.b, dtype=np.float32)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeMismatch(f"W {self.W.shape} incompatible with b {self.b.shape}")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise NonFiniteOutput("head parameters must be finite")

    def parameters(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


@dataclass
class FusionHead:
    """Image and text projections to 256, concatenated and L2-normalized."""

    W_img: np.ndarray
    b_img: np.ndarray
    W_txt: np.ndarray
    b_txt: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray

    def __post_init__(self):
        for name in ("W_img", "b_img", "W_txt", "b_txt", "W_out", "b_out"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float32))
        if self.W_img.shape[0] != FUSION_HIDDEN or self.W_txt.shape[0] != FUSION_HIDDEN:
            raise ShapeMismatch(f"projections must output {FUSION_HIDDEN} features")
        if self.W_out.shape[1] != 2 * FUSION_HIDDEN:
            raise ShapeMismatch(f"classifier input must be {2 * FUSION_HIDDEN} wide")

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "W_img": self.W_img,
            "b_img": self.b_img,
            "W_txt": self.W_txt,
            "b_txt": self.b_txt,
            "W_out": self.W_out,
            "b_out": self.b_out,
        }


@dataclass
class MultiHead:
    """Shared trunk feeding one linear head per objective."""

    W_shared: np.ndarray
    b_shared: np.ndarray
    heads: dict[str, LinearHead]

    def __post_init__(self):
        self.W_shared = np.asarray(self.W_shared, dtype=np.float32)
        self.b_shared = np.asarray(self.b_shared, dtype=np.float32)
        if set(self.heads) != set(OBJECTIVES):
            raise ShapeMismatch(f"objective heads must be exactly {OBJECTIVES}")
        for name, head in self.heads.items():
            if head.W.shape[1] != self.W_shared.shape[0]:
                raise ShapeMismatch(f"{name} head does not consume the trunk output")

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"W_shared": self.W_shared, "b_shared": self.b_shared}
        for name in OBJECTIVES:
            params[f"{name}.W"] = self.heads[name].W
            params[f"{name}.b"] = self.heads[name].b
        return params


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _as64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def forward_linear(head: LinearHead, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != head.W.shape[1]:
        raise ShapeMismatch(
            f"features {features.shape} do not match W {head.W.shape}"
        )
    logits = _as64(features) @ _as64(head.W).T + _as64(head.b)
    if not np.isfinite(logits).all():
        raise NonFiniteOutput("linear forward produced non-finite logits")
    return logits


def _l2_normalize(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return h / safe, norms


def forward_fusion(
    head: FusionHead,
    img: np.ndarray,
    txt: np.ndarray,
    return_hidden: bool = False,
):
    """Project, concatenate, L2-normalize per row, classify.

    Zero hidden rows are left unchanged by the normalization. With
    ``return_hidden`` the normalized 512-vector is also returned, which the
    test suite uses to assert the unit-norm invariant.
    """
    img, txt = np.asarray(img), np.asarray(txt)
    if img.ndim != 2 or txt.ndim != 2 or img.shape[0] != txt.shape[0]:
        raise ShapeMismatch(f"img {img.shape} and txt {txt.shape} must share a batch axis")
    if img.shape[1] != head.W_img.shape[1] or txt.shape[1] != head.W_txt.shape[1]:
        raise ShapeMismatch("input widths do not match the projection weights")
    p_img = _as64(img) @ _as64(head.W_img).T + _as64(head.b_img)
    p_txt = _as64(txt) @ _as64(head.W_txt).T + _as64(head.b_txt)
    hidden = np.concatenate([p_img, p_txt], axis=1)
    normalized, _ = _l2_normalize(hidden)
    logits = normalized @ _as64(head.W_out).T + _as64(head.b_out)
    if not np.isfinite(logits).all():
        raise NonFiniteOutput("fusion forward produced non-finite logits")
    if return_hidden:
        return logits, normalized
    return logits


def forward_multi(head: MultiHead, features: np.ndarray) -> dict[str, np.ndarray]:
    """Per-objective logits; the poisonous head yields one logit per row."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != head.W_shared.shape[1]:
        raise ShapeMismatch(f"features {features.shape} do not match the trunk")
    trunk = _as64(features) @ _as64(head.W_shared).T + _as64(head.b_shared)
    out = {}
    for name in OBJECTIVES:
        logits = trunk @ _as64(head.heads[name].W).T + _as64(head.heads[name].b)
        out[name] = logits[:, 0] if name == "poisonous" else logits
    return out


# ---------------------------------------------------------------------------
# Losses (value + analytic gradient w.r.t. logits)
# ---------------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability of the target class.

    Stabilized by max-subtraction; the gradient is (softmax - onehot) / B.
    """
    logits = _as64(np.asarray(logits))
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    b, c = logits.shape
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise IndexOutOfRange(f"target outside [0, {c})")
    logp = _log_softmax(logits)
    rows = np.arange(b)
    loss = float(-logp[rows, targets].mean())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return loss, grad / b


def binary_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Sigmoid BCE, mean over the batch, in the log-sum-exp stable form."""
    logits = _as64(np.asarray(logits))
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape or logits.ndim != 1:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    losses = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    sigmoid = 1.0 / (1.0 + np.exp(-logits))
    return float(losses.mean()), (sigmoid - targets) / logits.shape[0]


def mixup_cross_entropy(
    logits: np.ndarray,
    labels_i: np.ndarray,
    labels_j: np.ndarray,
    lam: float | np.ndarray,
) -> tuple[float, np.ndarray]:
    """Convex combination of two cross-entropies sharing one prediction.

    Accepts a scalar coefficient (one per batch) or a length-B vector
    (per-sample variant). Gradient: (softmax - lam*onehot_i - (1-lam)*onehot_j)/B.
    """
    logits = _as64(np.asarray(logits))
    labels_i = np.asarray(labels_i, dtype=np.int64)
    labels_j = np.asarray(labels_j, dtype=np.int64)
    b, c = logits.shape
    if labels_i.shape != (b,) or labels_j.shape != (b,):
        raise ShapeMismatch("label vectors must match the batch size")
    for lbl in (labels_i, labels_j):
        if lbl.size and (lbl.min() < 0 or lbl.max() >= c):
            raise IndexOutOfRange(f"target outside [0, {c})")
    lam_vec = np.full(b, float(lam)) if np.isscalar(lam) else np.asarray(lam, dtype=np.float64)
    if lam_vec.shape != (b,):
        raise ShapeMismatch("per-sample lam must have one entry per row")
    logp = _log_softmax(logits)
    rows = np.arange(b)
    loss = float((-lam_vec * logp[rows, labels_i] - (1.0 - lam_vec) * logp[rows, labels_j]).mean())
    grad = np.exp(logp)
    np.subtract.at(grad, (rows, labels_i), lam_vec)
    np.subtract.at(grad, (rows, labels_j), 1.0 - lam_vec)
    return loss, grad / b


# ---------------------------------------------------------------------------
# Backward passes (parameter gradients)
# ---------------------------------------------------------------------------

def backward_linear(
    head: LinearHead, features: np.ndarray, grad_logits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Parameter gradients and the gradient w.r.t. the inputs."""
    features = _as64(np.asarray(features))
    grad_logits = _as64(np.asarray(grad_logits))
    if grad_logits.shape != (features.shape[0], head.W.shape[0]):
        raise ShapeMismatch(f"grad_logits {grad_logits.shape} does not match the head")
    grads = {"W": grad_logits.T @ features, "b": grad_logits.sum(axis=0)}
    return grads, grad_logits @ _as64(head.W)


def _l2_normalize_backward(hidden: np.ndarray, grad_normalized: np.ndarray) -> np.ndarray:
    # rows with zero norm pass gradients through unchanged (normalization
    # acts as identity there)
    norms = np.linalg.norm(hidden, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    y = hidden / safe
    inner = (grad_normalized * y).sum(axis=1, keepdims=True)
    grad = (grad_normalized - inner * y) / safe
    return np.where(norms > 0, grad, grad_normalized)


def backward_fusion(
    head: FusionHead, img: np.ndarray, txt: np.ndarray, grad_logits: np.ndarray
) -> dict[str, np.ndarray]:
    """Chain rule through the output layer, the L2 normalization, and both projections."""
    img, txt = _as64(np.asarray(img)), _as64(np.asarray(txt))
    grad_logits = _as64(np.asarray(grad_logits))
    p_img = img @ _as64(head.W_img).T + _as64(head.b_img)
    p_txt = txt @ _as64(head.W_txt).T + _as64(head.b_txt)
    hidden = np.concatenate([p_img, p_txt], axis=1)
    normalized, _ = _l2_normalize(hidden)
    if grad_logits.shape != (hidden.shape[0], head.W_out.shape[0]):
        raise ShapeMismatch(f"grad_logits {grad_logits.shape} does not match the head")
    grads = {
        "W_out": grad_logits.T @ normalized,
        "b_out": grad_logits.sum(axis=0),
    }
    grad_normalized = grad_logits @ _as64(head.W_out)
    grad_hidden = _l2_normalize_backward(hidden, grad_normalized)
    g_img, g_txt = grad_hidden[:, :FUSION_HIDDEN], grad_hidden[:, FUSION_HIDDEN:]
    grads["W_img"] = g_img.T @ img
    grads["b_img"] = g_img.sum(axis=0)
    grads["W_txt"] = g_txt.T @ txt
    grads["b_txt"] = g_txt.sum(axis=0)
    return grads


def backward_multi(
    head: MultiHead, features: np.ndarray, grad_logits: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Accumulate trunk gradients across whichever objectives supplied grads."""
    features = _as64(np.asarray(features))
    trunk = features @ _as64(head.W_shared).T + _as64(head.b_shared)
    grads: dict[str, np.ndarray] = {}
    grad_trunk = np.zeros_like(trunk)
    for name, g in grad_logits.items():
        if name not in head.heads:
            raise ShapeMismatch(f"unknown objective {name!r}")
        g = _as64(np.asarray(g))
        if g.ndim == 1:
            g = g[:, None]
        sub = head.heads[name]
        grads[f"{name}.W"] = g.T @ trunk
        grads[f"{name}.b"] = g.sum(axis=0)
        grad_trunk += g @ _as64(sub.W)
    grads["W_shared"] = grad_trunk.T @ features
    grads["b_shared"] = grad_trunk.sum(axis=0)
    return grads


def shared_gradient_norm(head: MultiHead, features: np.ndarray, grad_logits: np.ndarray, objective: str) -> float:
    """L2 norm of one objective's loss gradient w.r.t. the shared trunk weights."""
    features = _as64(np.asarray(features))
    trunk_grad = _as64(np.asarray(grad_logits))
    if trunk_grad.ndim == 1:
        trunk_grad = trunk_grad[:, None]
    grad_trunk = trunk_grad @ _as64(head.heads[objective].W)
    grad_w_shared = grad_trunk.T @ features
    return float(np.linalg.norm(grad_w_shared))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def glorot_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_linear_head(num_classes: int, dim: int, seed: int, stream: str = "init") -> LinearHead:
    rng = stream_rng(seed, stream, "linear")
    return LinearHead(W=glorot_uniform((num_classes, dim), rng), b=np.zeros(num_classes, dtype=np.float32))


def init_fusion_head(num_classes: int, d_img: int, d_txt: int, seed: int) -> FusionHead:
    return FusionHead(
        W_img=glorot_uniform((FUSION_HIDDEN, d_img), stream_rng(seed, "init", "fusion-img")),
        b_img=np.zeros(FUSION_HIDDEN, dtype=np.float32),
        W_txt=glorot_uniform((FUSION_HIDDEN, d_txt), stream_rng(seed, "init", "fusion-txt")),
        b_txt=np.zeros(FUSION_HIDDEN, dtype=np.float32),
        W_out=glorot_uniform((num_classes, 2 * FUSION_HIDDEN), stream_rng(seed, "init", "fusion-out")),
        b_out=np.zeros(num_classes, dtype=np.float32),
    )


def init_multi_head(dim: int, head_sizes: dict[str, int], seed: int) -> MultiHead:
    """Trunk plus all four objective heads; poisonous is always a single logit."""
    sizes = dict(head_sizes)
    sizes["poisonous"] = 1
    heads = {}
    for name in OBJECTIVES:
        rng = stream_rng(seed, "init", f"multi-{name}")
        heads[name] = LinearHead(
            W=glorot_uniform((sizes[name], TRUNK_WIDTH), rng),
            b=np.zeros(sizes[name], dtype=np.float32),
        )
    return MultiHead(
        W_shared=glorot_uniform((TRUNK_WIDTH, dim), stream_rng(seed, "init", "multi-trunk")),
        b_shared=np.zeros(TRUNK_WIDTH, dtype=np.float32),
        heads=heads,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def head_kind(head) -> str:
    if isinstance(head, LinearHead):
        return "linear"
    if isinstance(head, FusionHead):
        return "fusion"
    if isinstance(head, MultiHead):
        return "multi"
    raise TypeError(f"not a head: {type(head)!r}")


def head_from_params(kind: str, params: dict[str, np.ndarray]):
    if kind == "linear":
        return LinearHead(W=params["W"], b=params["b"])
    if kind == "fusion":
        return FusionHead(**{k: params[k] for k in ("W_img", "b_img", "W_txt", "b_txt", "W_out", "b_out")})
    if kind == "multi":
        heads = {
            name: LinearHead(W=params[f"{name}.W"], b=params[f"{name}.b"]) for name in OBJECTIVES
        }
        return MultiHead(W_shared=params["W_shared"], b_shared=params["b_shared"], heads=heads)
    raise ValueError(f"unknown head kind {kind!r}")


def save_checkpoint(path: str | Path, head, meta: dict) -> None:
    """Named-tensor binary container plus a JSON sidecar at <path>.json."""
    params = head.parameters()
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<I", len(params))
    for name in sorted(params):
        tensor = np.ascontiguousarray(params[name], dtype="<f4")
        out += name.encode("utf-8") + b"\x00"
        out += struct.pack("<I", tensor.ndim)
        out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        out += tensor.tobytes()
    sidecar = {"kind": head_kind(head), "meta": meta}
    try:
        Path(path).write_bytes(bytes(out))
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path):
    """Returns (head, meta). Bitwise inverse of save_checkpoint."""
    try:
        blob = Path(path).read_bytes()
        sidecar = json.loads(Path(str(path) + ".json").read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != CKPT_MAGIC:
        raise MagicMismatch(f"{path} does not start with {CKPT_MAGIC!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        end = blob.find(b"\x00", offset)
        if end < 0:
            raise DimMismatch(f"{path}: truncated tensor name")
        name = blob[offset:end].decode("utf-8")
        offset = end + 1
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        payload = blob[offset : offset + 4 * size]
        if len(payload) != 4 * size:
            raise DimMismatch(f"{path}: truncated payload for tensor {name!r}")
        offset += 4 * size
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return head_from_params(sidecar["kind"], params), sidecar["meta"]
