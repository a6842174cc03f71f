"""Small numpy reference for SCT-enhanced cross-attention fusion.

Queries come from the SCT representation, keys and values from the code
representation. Each head applies its own softmax, the heads are concatenated,
rows are mean-pooled, and a logistic classifier produces the vulnerability
probability. Gradients are derived by hand so they can be checked against
central finite differences.

Embeddings are stub vectors (see :func:`stub_embed`); the intermediate-layer
map applied before projection is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput

DEFAULT_HEADS = 8
DEFAULT_BATCH_SIZE = 32  # used by the external trainer, recorded here only
DEFAULT_LEARNING_RATE = 2e-5  # ditto
EPS = 1e-12
# Large enough that truncation error, not float round-off, dominates the
# central difference; halving or doubling it then moves the error predictably.
GRAD_CHECK_STEP = 3e-4


def stub_embed(tokens: Sequence[str], n: int, seed: int = 0) -> np.ndarray:
    """Deterministic l x n embedding with entries in [-1, 1].

    Row ``i`` depends only on ``(tokens[i], i, seed)``.
    """
    if not tokens:
        raise EmptyInput("no tokens to embed")
    if n < 1:
        raise ValueError("embedding dimension must be >= 1")
    rows = []
    for pos, tok in enumerate(tokens):
        digest = hashlib.blake2b(f"{seed}\x00{pos}\x00{tok}".encode(), digest_size=16).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        rows.append(rng.uniform(-1.0, 1.0, n))
    return np.vstack(rows)


@dataclass
class FusionParams:
    """Per-head projections of shape (H, d, d/H) and a linear classifier."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    clf_w: np.ndarray
    clf_b: float = 0.0

    def __post_init__(self) -> None:
        self.clf_b = float(self.clf_b)
        h, d, dh = self.w_q.shape
        if self.w_k.shape != (h, d, dh) or self.w_v.shape != (h, d, dh):
            raise DimensionMismatch("W_Q, W_K and W_V must share a shape")
        if h * dh != d:
            raise DimensionMismatch(f"model dim {d} is not heads {h} x head dim {dh}")
        if self.clf_w.shape != (d,):
            raise DimensionMismatch(f"classifier weight must have shape ({d},)")
        for name, arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def d(self) -> int:
        return self.w_q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[2]

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, np.asarray(getattr(self, f.name))

    @classmethod
    def random(cls, d: int, heads: int = DEFAULT_HEADS, seed: int = 0, scale: float = 0.5):
        if d % heads:
            raise DimensionMismatch(f"model dim {d} not divisible by {heads} heads")
        rng = np.random.default_rng(seed)
        shape = (heads, d, d // heads)
        return cls(
            rng.normal(0, scale, shape),
            rng.normal(0, scale, shape),
            rng.normal(0, scale, shape),
            rng.normal(0, scale, d),
            float(rng.normal(0, scale)),
        )

    @classmethod
    def zeros(cls, d: int, heads: int = DEFAULT_HEADS):
        if d % heads:
            raise DimensionMismatch(f"model dim {d} not divisible by {heads} heads")
        shape = (heads, d, d // heads)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(d), 0.0)


class Prediction(NamedTuple):
    prob: float
    label: int
    loss: float


class FusionInstance(NamedTuple):
    h_ct: np.ndarray
    h_c: np.ndarray
    label: int


def _check(h: np.ndarray, name: str) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty l x n matrix, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError(f"{name} has non-finite entries")
    return h


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def attention_weights(h_ct: np.ndarray, h_c: np.ndarray, p: FusionParams) -> np.ndarray:
    """Softmax weights of shape (H, l_ct, l_c)."""
    h_ct, h_c = _check(h_ct, "h_ct"), _check(h_c, "h_c")
    if h_ct.shape[1] != p.d or h_c.shape[1] != p.d:
        raise DimensionMismatch(
            f"embedding dims {h_ct.shape[1]}, {h_c.shape[1]} do not match model dim {p.d}"
        )
    q = np.einsum("ln,hnk->hlk", h_ct, p.w_q)
    k = np.einsum("ln,hnk->hlk", h_c, p.w_k)
    return _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(p.head_dim))


def cross_attention(h_ct: np.ndarray, h_c: np.ndarray, p: FusionParams) -> np.ndarray:
    """Fused representation of shape (l_ct, d): per-head attention, heads concatenated."""
    a = attention_weights(h_ct, h_c, p)
    v = np.einsum("ln,hnk->hlk", np.asarray(h_c, float), p.w_v)
    heads = a @ v  # (H, l_ct, d_h)
    return np.concatenate(list(heads), axis=1)


def classify(fused: np.ndarray, p: FusionParams) -> float:
    fused = _check(fused, "fused")
    if fused.shape[1] != p.clf_w.shape[0]:
        raise DimensionMismatch(f"fused dim {fused.shape[1]} != classifier dim {p.clf_w.shape[0]}")
    return float(_sigmoid(float(fused.mean(axis=0) @ p.clf_w + p.clf_b)))


def bce_loss(prob: float, label: int) -> float:
    p = min(max(prob, EPS), 1.0 - EPS)
    return float(-(label * np.log(p) + (1 - label) * np.log(1.0 - p)))


def predict(inst: FusionInstance, p: FusionParams) -> Prediction:
    prob = classify(cross_attention(inst.h_ct, inst.h_c, p), p)
    return Prediction(prob, int(inst.label), bce_loss(prob, inst.label))


def loss_and_grads(inst: FusionInstance, p: FusionParams) -> tuple[float, FusionParams]:
    """Loss and its analytic gradient with respect to every parameter."""
    x_ct, x_c = _check(inst.h_ct, "h_ct"), _check(inst.h_c, "h_c")
    y = inst.label
    scale = np.sqrt(p.head_dim)

    q = np.einsum("ln,hnk->hlk", x_ct, p.w_q)
    k = np.einsum("ln,hnk->hlk", x_c, p.w_k)
    v = np.einsum("ln,hnk->hlk", x_c, p.w_v)
    a = _softmax(q @ k.transpose(0, 2, 1) / scale)
    heads = a @ v
    fused = np.concatenate(list(heads), axis=1)
    pooled = fused.mean(axis=0)
    prob = float(_sigmoid(float(pooled @ p.clf_w + p.clf_b)))
    loss = bce_loss(prob, y)

    dz = prob - y
    d_clf_w = dz * pooled
    d_clf_b = dz
    l_ct = x_ct.shape[0]
    d_fused = np.tile(dz * p.clf_w / l_ct, (l_ct, 1))
    d_heads = np.stack(np.split(d_fused, p.heads, axis=1))  # (H, l_ct, d_h)

    d_a = d_heads @ v.transpose(0, 2, 1)
    d_v = a.transpose(0, 2, 1) @ d_heads
    d_s = a * (d_a - (d_a * a).sum(axis=-1, keepdims=True))
    d_q = d_s @ k / scale
    d_k = d_s.transpose(0, 2, 1) @ q / scale

    grads = FusionParams(
        np.einsum("ln,hlk->hnk", x_ct, d_q),
        np.einsum("ln,hlk->hnk", x_c, d_k),
        np.einsum("ln,hlk->hnk", x_c, d_v),
        d_clf_w,
        d_clf_b,
    )
    return loss, grads


def _loss(inst: FusionInstance, p: FusionParams) -> float:
    return predict(inst, p).loss


def numeric_grads(inst: FusionInstance, p: FusionParams, step: float = GRAD_CHECK_STEP) -> FusionParams:
    """Central finite-difference gradient, one parameter entry at a time."""
    params = {name: np.array(arr, dtype=float) for name, arr in p.arrays()}
    grads = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)  # view: edits land in params[name]
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _loss(inst, FusionParams(**params))
            flat[i] = orig - step
            down = _loss(inst, FusionParams(**params))
            flat[i] = orig
            g[i] = (up - down) / (2 * step)
        grads[name] = g.reshape(arr.shape)
    return FusionParams(**grads)


def max_relative_error(a: FusionParams, b: FusionParams, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over all entries."""
    worst = 0.0
    for (_, x), (_, y) in zip(a.arrays(), b.arrays()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def grad_check(inst: FusionInstance, p: FusionParams, step: float = GRAD_CHECK_STEP) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    _, analytic = loss_and_grads(inst, p)
    return max_relative_error(analytic, numeric_grads(inst, p, step))


def make_instance(seed: int, l: int, n: int) -> FusionInstance:
    """Random seed-fixed instance built from stub embeddings."""
    rng = np.random.default_rng(seed)
    h_ct = stub_embed([f"sct{i}" for i in range(l)], n, seed)
    h_c = stub_embed([f"code{i}" for i in range(l)], n, seed + 1)
    return FusionInstance(h_ct, h_c, int(rng.integers(0, 2)))
