"""Prediction-layer and intermediate-layer distillation losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import NumericError, Tensor
from .mi import CriticPair, interpolated_bound
from .nn import Linear, Module, masked_mean, rng_stream

INTER_KINDS = ("MSE", "L2", "Cos", "PKD", "CE", "MI_alpha", "none")
PRED_KINDS = ("CE", "MSE")
NORM_EPS = 1e-12


@dataclass(frozen=True)
class InterLossKind:
    kind: str = "MSE"
    alpha: float = 0.9

    def __post_init__(self):
        if self.kind not in INTER_KINDS:
            raise ValueError(f"unknown intermediate loss {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def label(self) -> str:
        return f"MI_alpha@{self.alpha:g}" if self.kind == "MI_alpha" else self.kind


class Projection(Module):
    """Learned student-width to teacher-width map; the identity when widths agree."""

    def __init__(self, h_student: int, h_teacher: int, seed: int = 0, index: int = 0):
        self.h_in, self.h_out = h_student, h_teacher
        if h_student == h_teacher:
            self.linear = None
        else:
            self.linear = Linear(h_student, h_teacher, rng_stream(seed * 1000 + index, "projection"),
                                 bias=False)

    def __call__(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.h_in:
            raise ValueError(f"projection expects width {self.h_in}, got {h.shape[-1]}")
        return h if self.linear is None else self.linear(h)


def _check_finite(x: Tensor):
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite logits")


def _row_weights(shape: tuple, mask: np.ndarray | None) -> np.ndarray:
    # one weight per row of the flattened (..., C) array, normalised to sum to 1
    rows = int(np.prod(shape[:-1]))
    if mask is None:
        return np.full(rows, 1.0 / rows)
    w = np.asarray(mask, dtype=np.float64).reshape(-1)
    if w.size != rows:
        raise ValueError("mask does not match logits")
    return w / w.sum()


def pred_loss(kind: str, student_logits: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Prediction loss against a hard label array (ints) or soft distributions (floats).

    CE is ``-sum target * log_softmax(logits)`` averaged over rows; MSE is the mean
    squared difference between the logits and the (one-hot or soft) target.
    """
    if kind not in PRED_KINDS:
        raise ValueError(f"unknown prediction loss {kind!r}")
    student_logits = ag.as_tensor(student_logits)
    _check_finite(student_logits)
    c = student_logits.shape[-1]
    target = np.asarray(target)
    if np.issubdtype(target.dtype, np.integer):
        if target.shape != student_logits.shape[:-1]:
            raise ValueError("hard labels must have one entry per logit row")
        target = np.eye(c)[target]
    else:
        target = target.astype(np.float64)
        if target.shape != student_logits.shape:
            raise ValueError(f"soft target shape {target.shape} != logits {student_logits.shape}")
        if not np.allclose(target.sum(-1), 1.0, atol=1e-6):
            raise ValueError("soft target rows must sum to 1")
    flat = student_logits.reshape(-1, c)
    w = _row_weights(student_logits.shape, mask)
    tgt = target.reshape(-1, c)
    if kind == "CE":
        per_row = -(ag.log_softmax(flat, axis=-1) * tgt).sum(axis=-1)
    else:
        per_row = ((flat - tgt) ** 2).mean(axis=-1)
    return (per_row * w).sum()


def kd_pred_loss(kind: str, student_logits: Tensor, teacher_logits, mask=None) -> Tensor:
    """Prediction loss against the teacher: soft targets for CE, raw logits for MSE."""
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, float)
    if kind == "CE":
        z = t - t.max(axis=-1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        return pred_loss("CE", student_logits, probs, mask)
    if kind == "MSE":
        student_logits = ag.as_tensor(student_logits)
        _check_finite(student_logits)
        c = student_logits.shape[-1]
        w = _row_weights(student_logits.shape, mask)
        per_row = ((student_logits.reshape(-1, c) - t.reshape(-1, c)) ** 2).mean(axis=-1)
        return (per_row * w).sum()
    raise ValueError(f"unknown prediction loss {kind!r}")


def _normalize(x: Tensor) -> Tensor:
    return x / ag.sqrt((x * x).sum(axis=-1, keepdims=True) + NORM_EPS)


def _batched(h, name: str) -> Tensor:
    h = ag.as_tensor(h)
    if h.ndim == 2:
        return h.reshape(1, *h.shape)
    if h.ndim != 3:
        raise ValueError(f"{name} must be (T, h) or (B, T, h)")
    return h


def inter_loss(kind: InterLossKind, hs, ht, proj: Projection, critic: CriticPair | None = None,
               mask: np.ndarray | None = None) -> Tensor:
    """Discrepancy between a student state and a teacher state.

    ``hs`` and ``ht`` are ``(T, h)`` or ``(B, T, h)``. The student state goes
    through ``proj`` first. MSE, L2, Cos, PKD and CE are computed per position and
    averaged over valid positions; MI_alpha mean-pools each sequence and returns
    the negated interpolated bound of ``critic`` over the batch.
    """
    if kind.kind == "none":
        return Tensor(0.0)
    u = proj(_batched(hs, "student state"))
    v = _batched(ht, "teacher state")
    if u.shape != v.shape:
        raise ValueError(f"projected student state {u.shape} does not match teacher {v.shape}")
    b, t, _ = u.shape
    if mask is None:
        w = np.full((b, t), 1.0 / (b * t))
    else:
        w = np.asarray(mask, dtype=np.float64).reshape(b, t)
        w = w / w.sum()
    k = kind.kind
    if k == "MSE":
        per_pos = ((u - v) ** 2).mean(axis=-1)
    elif k == "L2":
        per_pos = ag.safe_norm(u - v, axis=-1)
    elif k == "Cos":
        per_pos = 1.0 - (_normalize(u) * _normalize(v)).sum(axis=-1)
    elif k == "PKD":
        per_pos = ((_normalize(u) - _normalize(v)) ** 2).sum(axis=-1)
    elif k == "CE":
        vt = v.data - v.data.max(axis=-1, keepdims=True)
        target = np.exp(vt) / np.exp(vt).sum(axis=-1, keepdims=True)
        per_pos = -(ag.log_softmax(u, axis=-1) * target).sum(axis=-1)
    elif k == "MI_alpha":
        if critic is None:
            raise ValueError("MI_alpha needs a critic")
        if b < 2:
            raise ValueError("MI_alpha needs a batch of at least 2 sequences")
        return -critic.bound(masked_mean(u, mask), masked_mean(v, mask), kind.alpha)
    else:
        raise ValueError(f"unknown intermediate loss {k!r}")
    return (per_pos * w).sum()
