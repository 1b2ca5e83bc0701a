"""Stacked augmentation policies over CA, RA, BT and Mixup.

CA, RA and BT rewrite token sequences one example at a time, each operation
consuming the output of the previous one. Mixup works on embeddings and is
therefore applied last, at batch level, once every discrete operation has run.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .io import ConfigError

OPS = ("CA", "RA", "BT", "Mixup")


@dataclass(frozen=True)
class AugPolicy:
    ops: tuple = ()
    ca_prob: float = 0.15
    ra_swap: float = 0.1
    ra_replace: float = 0.3
    mixup_dist: str = "uniform"
    mixup_a: float = 0.4

    def __post_init__(self):
        ops = tuple(self.ops)
        unknown = [o for o in ops if o not in OPS]
        if unknown:
            raise ConfigError(f"unknown augmentation op(s) {unknown}; expected {OPS}")
        if ops.count("Mixup") > 1:
            raise ConfigError("Mixup may appear at most once in a policy")
        if "Mixup" in ops:
            ops = tuple(o for o in ops if o != "Mixup") + ("Mixup",)
        object.__setattr__(self, "ops", ops)
        for name in ("ca_prob", "ra_swap", "ra_replace"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.mixup_dist not in ("uniform", "beta"):
            raise ConfigError("mixup_dist must be 'uniform' or 'beta'")
        if self.mixup_a <= 0:
            raise ConfigError("mixup_a must be positive")

    @property
    def discrete_ops(self) -> tuple:
        return tuple(o for o in self.ops if o != "Mixup")

    @property
    def uses_mixup(self) -> bool:
        return "Mixup" in self.ops

    @property
    def label(self) -> str:
        return "+".join(self.ops) if self.ops else "none"

    def sample_lambda(self, rng: np.random.Generator, size=None):
        if self.mixup_dist == "beta":
            return rng.beta(self.mixup_a, self.mixup_a, size)
        return rng.uniform(0.0, 1.0, size)


@dataclass
class Example:
    tokens: np.ndarray
    label: object                     # int, or per-position int array for tagging
    soft_label: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if isinstance(self.label, (list, tuple, np.ndarray)):
            self.label = np.asarray(self.label, dtype=np.int64)
            if self.label.shape != self.tokens.shape:
                raise ValueError("tagging label length must equal token length")
        if self.soft_label is not None:
            s = np.asarray(self.soft_label, dtype=np.float64)
            if not np.allclose(s.sum(-1), 1.0, atol=1e-6):
                raise ValueError("soft label rows must sum to 1")
            self.soft_label = s


class MaskFiller(Protocol):
    def fill(self, tokens: np.ndarray, positions: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


class Paraphraser(Protocol):
    def paraphrase(self, tokens: np.ndarray, labels, rng: np.random.Generator): ...


class UnigramFiller:
    """Refill masked slots by sampling the training unigram distribution."""

    def __init__(self, unigram: np.ndarray):
        self.unigram = np.asarray(unigram, dtype=np.float64)

    def fill(self, tokens, positions, rng):
        out = tokens.copy()
        if len(positions):
            out[positions] = rng.choice(len(self.unigram), size=len(positions), p=self.unigram)
        return out


class LexiconParaphraser:
    """Crude paraphrase: synonym-replace every covered token, then one adjacent swap."""

    def __init__(self, lexicon: dict[int, list[int]]):
        self.lexicon = lexicon

    def paraphrase(self, tokens, labels, rng):
        out = tokens.copy()
        for t, tok in enumerate(tokens):
            syn = self.lexicon.get(int(tok))
            if syn:
                out[t] = syn[rng.integers(len(syn))]
        labels = None if labels is None else np.array(labels, copy=True)
        if len(out) > 1:
            k = int(rng.integers(len(out) - 1))
            out[[k, k + 1]] = out[[k + 1, k]]
            if labels is not None:
                labels[[k, k + 1]] = labels[[k + 1, k]]
        return out, labels


def random_augment(tokens, labels, lexicon, swap_p: float, replace_p: float, rng):
    """Synonym replacement, then random swaps; per-position tags travel with their tokens."""
    out = tokens.copy()
    labels = None if labels is None else np.array(labels, copy=True)
    if replace_p > 0:
        for t in np.nonzero(rng.random(len(out)) < replace_p)[0]:
            syn = lexicon.get(int(out[t]))
            if syn:
                out[t] = syn[rng.integers(len(syn))]
    if swap_p > 0 and len(out) > 1:
        for t in np.nonzero(rng.random(len(out)) < swap_p)[0]:
            o = int(rng.integers(len(out) - 1))
            o += o >= t
            out[[t, o]] = out[[o, t]]
            if labels is not None:
                labels[[t, o]] = labels[[o, t]]
    return out, labels


def apply_policy(policy: AugPolicy, example: Example, lexicon: dict, unigram: np.ndarray,
                 rng: np.random.Generator, *, mask_filler: MaskFiller | None = None,
                 paraphraser: Paraphraser | None = None) -> Example:
    """Run the discrete ops of ``policy`` in order. Mixup is left to the batch stage."""
    if len(example.tokens) == 0:
        raise ValueError("cannot augment an empty example")
    tagging = isinstance(example.label, np.ndarray)
    toks = example.tokens.copy()
    tags = example.label.copy() if tagging else None
    filler = mask_filler or UnigramFiller(unigram)
    para = paraphraser or LexiconParaphraser(lexicon)
    for op in policy.discrete_ops:
        if op == "CA":
            pos = np.nonzero(rng.random(len(toks)) < policy.ca_prob)[0]
            toks = filler.fill(toks, pos, rng)
        elif op == "RA":
            toks, tags = random_augment(toks, tags, lexicon, policy.ra_swap, policy.ra_replace, rng)
        elif op == "BT":
            toks, tags = para.paraphrase(toks, tags, rng)
        else:
            raise ConfigError(f"unknown augmentation op {op!r}")
    return Example(toks, tags if tagging else example.label, None)


def augment_tokens(policy: AugPolicy, tokens: np.ndarray, mask: np.ndarray, labels: np.ndarray,
                   lexicon: dict, unigram: np.ndarray, rng: np.random.Generator, **plugins):
    """Batch version of ``apply_policy`` over a padded ``(B, T)`` matrix."""
    out_t = tokens.copy()
    out_l = labels.copy()
    tagging = labels.ndim == 2
    for b in range(len(tokens)):
        n = int(mask[b].sum())
        ex = Example(tokens[b, :n], labels[b, :n] if tagging else int(labels[b]))
        res = apply_policy(policy, ex, lexicon, unigram, rng, **plugins)
        out_t[b, :n] = res.tokens
        if tagging:
            out_l[b, :n] = res.label
    return out_t, out_l


def _check_lambda(lam):
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0.0) or np.any(lam_arr > 1.0):
        raise ValueError("mixup lambda must lie in [0, 1]")
    return lam_arr


def mixup_classification(xi, xj, yi, yj, lam: float):
    """``x = lam*xi + (1-lam)*xj`` elementwise and the same mix of the one-hot labels."""
    _check_lambda(lam)
    xi, xj = np.asarray(xi, float), np.asarray(xj, float)
    yi, yj = np.asarray(yi, float), np.asarray(yj, float)
    if xi.shape != xj.shape or yi.shape != yj.shape:
        raise ValueError("mixup inputs must share a shape; pad or truncate first")
    if lam == 1.0:
        return xi.copy(), yi.copy()
    return lam * xi + (1.0 - lam) * xj, lam * yi + (1.0 - lam) * yj


def mixup_tagging(xi, xj, yi, yj, lam: float):
    """Per-position mixup: every position of the embeddings and of the tag one-hots mixes with ``lam``."""
    xi, yi = np.asarray(xi, float), np.asarray(yi, float)
    if xi.ndim != 2 or yi.ndim != 2 or len(xi) != len(yi):
        raise ValueError("tagging mixup expects (T, h) embeddings and (T, C) targets")
    return mixup_classification(xi, xj, yi, yj, lam)


@dataclass
class MixPlan:
    """Partner index and mixing weight per batch row, shared by teacher and student."""
    partner: np.ndarray
    lam: np.ndarray = field(repr=False)

    @classmethod
    def draw(cls, policy: AugPolicy, batch: int, rng: np.random.Generator) -> "MixPlan":
        return cls(rng.permutation(batch), policy.sample_lambda(rng, batch))

    def mix_embeddings(self, emb: Tensor) -> Tensor:
        lam = self.lam.reshape(-1, *([1] * (emb.ndim - 1)))
        return emb * lam + emb[self.partner] * (1.0 - lam)

    def mix_targets(self, y: np.ndarray) -> np.ndarray:
        lam = self.lam.reshape(-1, *([1] * (y.ndim - 1)))
        return lam * y + (1.0 - lam) * y[self.partner]

    def mix_mask(self, mask: np.ndarray) -> np.ndarray:
        return mask | mask[self.partner]


def teacher_relabel(teacher, x_hat, mask: np.ndarray | None = None) -> np.ndarray:
    """Teacher softmax on augmented input: token ids ``(B, T)`` or embeddings ``(B, T, h)``."""
    if isinstance(x_hat, Tensor) or np.asarray(x_hat).dtype.kind == "f":
        emb = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
        logits, _ = teacher.forward_embedded(Tensor(emb.data), mask)
    else:
        logits, _ = teacher.forward(np.asarray(x_hat), mask)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
