"""Datasets: synthetic task generators, JSON-lines I/O, lexicons and unigram tables."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import atomic_write_text, dumps_jsonl, read_jsonl
from .nn import rng_stream

PAD = 0


@dataclass
class Dataset:
    """Padded token matrix plus labels.

    ``labels`` is ``(N,)`` for classification and ``(N, T)`` for tagging (padded
    positions hold 0 and are ignored through ``mask``).
    """
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    task_kind: str
    n_classes: int
    vocab_size: int
    name: str = "dataset"

    def __post_init__(self):
        if self.task_kind not in ("classification", "tagging"):
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == "tagging" and self.labels.shape != self.tokens.shape:
            raise ValueError("tagging labels must match the token matrix")

    def __len__(self) -> int:
        return len(self.tokens)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.tokens[idx], self.mask[idx], self.labels[idx], self.task_kind,
                       self.n_classes, self.vocab_size, self.name)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield index arrays; shuffled when ``rng`` is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield order[start:start + batch_size]

    def records(self) -> list[dict]:
        out = []
        for toks, m, lab in zip(self.tokens, self.mask, self.labels):
            n = int(m.sum())
            rec = {"tokens": [int(t) for t in toks[:n]]}
            if self.task_kind == "tagging":
                rec["tags"] = [int(t) for t in lab[:n]]
            else:
                rec["label"] = int(lab)
            out.append(rec)
        return out


def from_records(records: list[dict], vocab_size: int | None = None, n_classes: int | None = None,
                 name: str = "dataset") -> Dataset:
    if not records:
        raise ValueError("no records")
    tagging = "tags" in records[0]
    t = max(len(r["tokens"]) for r in records)
    if t == 0:
        raise ValueError("empty sequence in dataset")
    n = len(records)
    tokens = np.full((n, t), PAD, dtype=np.int64)
    mask = np.zeros((n, t), dtype=bool)
    labels = np.zeros((n, t) if tagging else n, dtype=np.int64)
    for k, r in enumerate(records):
        toks = r["tokens"]
        if not toks:
            raise ValueError(f"record {k} has an empty token list")
        tokens[k, :len(toks)] = toks
        mask[k, :len(toks)] = True
        if tagging:
            if len(r["tags"]) != len(toks):
                raise ValueError(f"record {k}: tags and tokens differ in length")
            labels[k, :len(toks)] = r["tags"]
        else:
            labels[k] = r["label"]
    vocab = int(tokens.max()) + 1 if vocab_size is None else vocab_size
    classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if tokens.max() >= vocab:
        raise ValueError("token id exceeds vocab_size")
    return Dataset(tokens, mask, labels, "tagging" if tagging else "classification",
                   classes, vocab, name)


def load_jsonl(path, vocab_size: int | None = None, n_classes: int | None = None) -> Dataset:
    return from_records(read_jsonl(path), vocab_size, n_classes, name=Path(path).stem)


def save_jsonl(ds: Dataset, path) -> None:
    atomic_write_text(path, dumps_jsonl(ds.records()))


# --------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class TaskSpec:
    task_kind: str = "classification"
    vocab_size: int = 64
    seq_len: int = 16
    n_classes: int = 3
    keywords_per_class: int = 8
    keyword_rate: float = 0.25
    confuser_rate: float = 0.12
    zipf: float = 1.2
    emission_noise: float = 0.3
    stickiness: float = 0.8
    negation_rate: float = 0.0


# harder variant used by the benchmarks: half of the own-class evidence is negated
NEGATION_TASK = TaskSpec(keyword_rate=0.35, confuser_rate=0.08, negation_rate=0.5)


def _keyword_ids(spec: TaskSpec) -> np.ndarray:
    # class c owns ids 1 + c*k ... 1 + (c+1)*k - 1; the rest (>= 1 + C*k) are background
    k = spec.keywords_per_class
    return 1 + np.arange(spec.n_classes * k).reshape(spec.n_classes, k)


def make_classification(spec: TaskSpec, n: int, seed: int, name: str = "synthetic-cls") -> Dataset:
    """Class-conditional token sequences.

    Each position is a keyword of the true class (with a Zipf-skewed keyword
    distribution, so some keywords are rare), a keyword of another class, or a
    background token. With ``negation_rate > 0`` some own-class keywords are
    replaced by a negator followed by a keyword of the preceding class, which a
    bag-of-tokens model reads as evidence for the wrong class.
    """
    rng = rng_stream(seed, "data-gen")
    kw = _keyword_ids(spec)
    k = spec.keywords_per_class
    first_bg = 1 + spec.n_classes * k
    if first_bg >= spec.vocab_size:
        raise ValueError("vocabulary too small for the requested keywords")
    zp = 1.0 / np.arange(1, k + 1) ** spec.zipf
    zp /= zp.sum()
    labels = rng.integers(0, spec.n_classes, n)
    u = rng.random((n, spec.seq_len))
    kw_pick = rng.choice(k, size=(n, spec.seq_len), p=zp)
    other = (labels[:, None] + rng.integers(1, spec.n_classes, (n, spec.seq_len))) % spec.n_classes
    bg = rng.integers(first_bg + (spec.negation_rate > 0), spec.vocab_size, (n, spec.seq_len))
    own = kw[labels[:, None], kw_pick]
    conf = kw[other, rng.integers(0, k, (n, spec.seq_len))]
    tokens = np.where(u < spec.keyword_rate, own,
                      np.where(u < spec.keyword_rate + spec.confuser_rate, conf, bg))
    if spec.negation_rate > 0:
        # a negator before a keyword of class c - 1 is evidence for class c
        neg = first_bg
        slot = (u < spec.keyword_rate) & (rng.random(u.shape) < spec.negation_rate)
        slot[:, 0] = False
        slot &= ~np.roll(slot, 1, axis=1)
        shifted = kw[(labels[:, None] - 1) % spec.n_classes, kw_pick]
        tokens = np.where(slot, shifted, tokens)
        tokens[:, :-1] = np.where(slot[:, 1:], neg, tokens[:, :-1])
    mask = np.ones_like(tokens, dtype=bool)
    return Dataset(tokens.astype(np.int64), mask, labels.astype(np.int64), "classification",
                   spec.n_classes, spec.vocab_size, name)


def make_tagging(spec: TaskSpec, n: int, seed: int, name: str = "synthetic-tag") -> Dataset:
    """Sticky Markov tag chains; each tag emits from its own token block, or uniformly with noise."""
    rng = rng_stream(seed, "data-gen")
    c, t = spec.n_classes, spec.seq_len
    block = (spec.vocab_size - 1) // c
    if block < 1:
        raise ValueError("vocabulary too small for the requested tag count")
    tags = np.zeros((n, t), dtype=np.int64)
    tags[:, 0] = rng.integers(0, c, n)
    for pos in range(1, t):
        stay = rng.random(n) < spec.stickiness
        tags[:, pos] = np.where(stay, tags[:, pos - 1], rng.integers(0, c, n))
    own = 1 + tags * block + rng.integers(0, block, (n, t))
    noise = rng.integers(1, spec.vocab_size, (n, t))
    tokens = np.where(rng.random((n, t)) < spec.emission_noise, noise, own)
    return Dataset(tokens.astype(np.int64), np.ones((n, t), dtype=bool), tags, "tagging",
                   c, spec.vocab_size, name)


def make_task(spec: TaskSpec, n: int, seed: int, name: str | None = None) -> Dataset:
    if spec.task_kind == "classification":
        return make_classification(spec, n, seed, name or "synthetic-cls")
    if spec.task_kind == "tagging":
        return make_tagging(spec, n, seed, name or "synthetic-tag")
    raise ValueError(f"unknown task kind {spec.task_kind!r}")


def make_splits(spec: TaskSpec, n_train: int, n_dev: int, n_test: int, seed: int,
                name: str | None = None) -> dict[str, Dataset]:
    """Train/dev/test drawn from one stream so they never overlap in generation order."""
    full = make_task(spec, n_train + n_dev + n_test, seed, name)
    cuts = np.cumsum([n_train, n_dev])
    idx = np.arange(len(full))
    parts = np.split(idx, cuts)
    return {k: full.subset(p) for k, p in zip(("train", "dev", "test"), parts)}


def synthetic_lexicon(spec: TaskSpec, seed: int = 0, per_token: int = 2) -> dict[int, list[int]]:
    """Synonyms: keywords map to keywords of the same class; background to background."""
    rng = rng_stream(seed, "lexicon")
    lex: dict[int, list[int]] = {}
    if spec.task_kind == "classification":
        groups = [list(g) for g in _keyword_ids(spec)]
        first_bg = 1 + spec.n_classes * spec.keywords_per_class
        bg = list(range(first_bg, spec.vocab_size))
        groups += [bg[i:i + 4] for i in range(0, len(bg), 4)]
    else:
        block = (spec.vocab_size - 1) // spec.n_classes
        groups = [list(range(1 + c * block, 1 + (c + 1) * block)) for c in range(spec.n_classes)]
    for g in groups:
        for tok in g:
            others = [o for o in g if o != tok]
            if others:
                pick = rng.choice(len(others), size=min(per_token, len(others)), replace=False)
                lex[int(tok)] = sorted(int(others[p]) for p in pick)
    return lex


def read_lexicon(path) -> dict[int, list[int]]:
    """``token_id<TAB>synonym_id`` per line; a token may appear on several lines."""
    lex: dict[int, list[int]] = defaultdict(list)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>synonym'")
            lex[int(parts[0])].append(int(parts[1]))
    return dict(lex)


def write_lexicon(lex: dict[int, list[int]], path) -> None:
    lines = [f"{t}\t{s}\n" for t in sorted(lex) for s in lex[t]]
    atomic_write_text(path, "".join(lines))


def unigram_table(ds: Dataset) -> np.ndarray:
    """Token probabilities over the valid positions of ``ds`` (length ``vocab_size``)."""
    counts = np.bincount(ds.tokens[ds.mask], minlength=ds.vocab_size).astype(np.float64)
    return counts / counts.sum()
