"""LoRA-parameterised linear predictors with exact gradients, and base quantisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix, matmul

KINDS = ("least_squares", "multinomial_logistic", "zero")


@dataclass(frozen=True)
class ModelSpec:
    """Which loss is used and the shape ``d1 x d2`` of the adapted weight.

    ``zero`` is a constant-zero loss whose gradients vanish identically; it
    isolates the gossip dynamics from optimisation.
    """

    kind: str
    d1: int
    d2: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.d1 < 1 or self.d2 < 1:
            raise ValueError(f"d1 and d2 must be >= 1, got {self.d1}, {self.d2}")

    @property
    def is_classifier(self) -> bool:
        return self.kind == "multinomial_logistic"


@dataclass(frozen=True)
class DataBatch:
    """``x`` is ``m x d2``; ``y`` holds class indices (classifier) or ``m x d1`` targets."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass
class LoraLayer:
    """Frozen base ``w0`` (d1 x d2) with trainable ``b`` (d1 x r) and ``a`` (r x d2)."""

    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        d1, d2 = self.w0.shape
        r = self.a.shape[0]
        if self.a.shape != (r, d2) or self.b.shape != (d1, r):
            raise ShapeError(
                f"inconsistent LoRA shapes: w0 {self.w0.shape}, a {self.a.shape}, b {self.b.shape}"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    def effective_weight(self) -> np.ndarray:
        return self.w0 + matmul(self.b, self.a)

    def copy(self) -> LoraLayer:
        # w0 is shared, never copied
        return LoraLayer(self.w0, self.a.copy(), self.b.copy())

    def to_json(self) -> dict:
        return {"w0": self.w0.tolist(), "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> LoraLayer:
        return cls(as_matrix(obj["w0"], "w0"), as_matrix(obj["a"], "a"), as_matrix(obj["b"], "b"))


@dataclass(frozen=True)
class GradPair:
    grad_a: np.ndarray
    grad_b: np.ndarray
    grad_w: np.ndarray


def _check_batch(spec: ModelSpec, w: np.ndarray, batch: DataBatch) -> None:
    if w.shape != (spec.d1, spec.d2):
        raise ShapeError(f"weight shape {w.shape} does not match model ({spec.d1}, {spec.d2})")
    x, y = batch.x, batch.y
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != spec.d2:
        raise ShapeError(f"batch has {x.shape[1]} features, model expects {spec.d2}")
    if spec.kind == "multinomial_logistic":
        if y.shape != (x.shape[0],) or np.any(y < 0) or np.any(y >= spec.d1):
            raise ValueError(f"labels must be {x.shape[0]} class indices in [0, {spec.d1})")
    elif spec.kind == "least_squares" and y.shape != (x.shape[0], spec.d1):
        raise ShapeError(f"targets must have shape ({x.shape[0]}, {spec.d1}), got {y.shape}")


def _softmax_terms(logits: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return shifted, lse


def loss_w(spec: ModelSpec, w: np.ndarray, batch: DataBatch) -> float:
    """Mean loss of the full weight ``w`` on ``batch``."""
    _check_batch(spec, w, batch)
    m = len(batch)
    if spec.kind == "zero":
        return 0.0
    logits = batch.x @ w.T
    if spec.kind == "least_squares":
        resid = logits - batch.y
        return float(np.sum(resid * resid) / (2.0 * m))
    shifted, lse = _softmax_terms(logits)
    return float(np.mean(lse - shifted[np.arange(m), batch.y]))


def grad_w(spec: ModelSpec, w: np.ndarray, batch: DataBatch) -> np.ndarray:
    """Gradient of :func:`loss_w` with respect to ``w``."""
    _check_batch(spec, w, batch)
    m = len(batch)
    if spec.kind == "zero":
        return np.zeros_like(w)
    logits = batch.x @ w.T
    if spec.kind == "least_squares":
        return (logits - batch.y).T @ batch.x / m
    shifted, lse = _softmax_terms(logits)
    p = np.exp(shifted - lse[:, None])
    p[np.arange(m), batch.y] -= 1.0
    return p.T @ batch.x / m


def loss(spec: ModelSpec, layer: LoraLayer, batch: DataBatch) -> float:
    return loss_w(spec, layer.effective_weight(), batch)


def lift_gradient(gw: np.ndarray, a: np.ndarray, b: np.ndarray) -> GradPair:
    """Chain rule through ``W = W0 + B A``: dA = B^T dW, dB = dW A^T."""
    return GradPair(grad_a=matmul(b.T, gw), grad_b=matmul(gw, a.T), grad_w=gw)


def gradient(spec: ModelSpec, layer: LoraLayer, batch: DataBatch) -> GradPair:
    return lift_gradient(grad_w(spec, layer.effective_weight(), batch), layer.a, layer.b)


def accuracy_w(spec: ModelSpec, w: np.ndarray, batch: DataBatch) -> float:
    if not spec.is_classifier:
        return float("nan")
    return float(np.mean(np.argmax(batch.x @ w.T, axis=1) == batch.y))


def quantize_base(w0: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric uniform per-matrix quantisation, returned dequantised.

    The ``2**bits`` levels are evenly spaced on ``[-max|w0|, max|w0|]``;
    every entry moves to its nearest level, so the error is at most half a
    step, ``max|w0| / (2**bits - 1)``.
    """
    if not (isinstance(bits, (int, np.integer)) and 2 <= bits <= 8):
        raise ValueError(f"bits must be an integer in [2, 8], got {bits!r}")
    w0 = np.asarray(w0, dtype=np.float64)
    if not np.all(np.isfinite(w0)):
        raise ValueError("w0 has non-finite entries")
    scale = float(np.max(np.abs(w0))) if w0.size else 0.0
    if scale == 0.0:
        return np.zeros_like(w0)
    top = 2**bits - 1
    k = np.rint((w0 / scale + 1.0) * top / 2.0)
    k = np.clip(k, 0, top)
    return np.clip(scale * (2.0 * k - top) / top, -scale, scale)
