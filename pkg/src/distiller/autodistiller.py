"""Dataset features, a boosted-tree meta-regressor and config recommendation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .config import DistillerConfig, SearchSpace
from .nn import rng_stream

# ------------------------------------------------------------- embeddings


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray]
    dim: int

    def __getitem__(self, word: str) -> np.ndarray:
        # unknown words fall back to the zero vector
        v = self.vectors.get(word)
        return np.zeros(self.dim) if v is None else v


def read_embeddings(path) -> EmbeddingTable:
    """``word<TAB>v1 v2 ... vd`` per line, GloVe-style."""
    vecs, dim = {}, None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                word, rest = line.split("\t")
                v = np.array([float(x) for x in rest.split()])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>v1 v2 ...'") from None
            if dim is None:
                dim = len(v)
            elif len(v) != dim:
                raise ValueError(f"{path}:{lineno}: width {len(v)} differs from {dim}")
            vecs[word] = v
    if dim is None:
        raise ValueError(f"{path}: no vectors")
    return EmbeddingTable(vecs, dim)


def default_embeddings() -> EmbeddingTable:
    with resources.as_file(resources.files("distiller") / "resources" / "embeddings.txt") as p:
        return read_embeddings(p)


def token_words(seq: Iterable) -> list[str]:
    """Integer token ids become the words ``w<id>``; strings pass through."""
    return [f"w{t}" if isinstance(t, (int, np.integer)) else str(t) for t in seq]


# --------------------------------------------------------------- features

@dataclass
class Idf:
    n_datasets: int
    doc_freq: dict[str, int]

    def __call__(self, word: str) -> float:
        return math.log((1 + self.n_datasets) / (1 + self.doc_freq.get(word, 0)))


def build_idf(corpora: Sequence[Iterable[Sequence]]) -> Idf:
    """Inverse document frequency where every registered dataset is one document."""
    df: dict[str, int] = {}
    for corpus in corpora:
        for w in {w for seq in corpus for w in token_words(seq)}:
            df[w] = df.get(w, 0) + 1
    return Idf(len(corpora), df)


@dataclass
class DatasetFeatures:
    context_embedding: np.ndarray
    task_embedding: np.ndarray
    baseline_score: float
    teacher_score: float
    n_examples: int

    def __post_init__(self):
        self.context_embedding = np.asarray(self.context_embedding, dtype=np.float64)
        self.task_embedding = np.asarray(self.task_embedding, dtype=np.float64)
        if self.context_embedding.shape != self.task_embedding.shape:
            raise ValueError("context and task embeddings must share a width")
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.context_embedding, self.task_embedding,
                               [self.baseline_score, self.teacher_score, math.log(self.n_examples)]])

    def to_dict(self) -> dict:
        return {"context_embedding": [float(x) for x in self.context_embedding],
                "task_embedding": [float(x) for x in self.task_embedding],
                "baseline_score": self.baseline_score, "teacher_score": self.teacher_score,
                "n_examples": self.n_examples}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetFeatures":
        return cls(np.array(d["context_embedding"]), np.array(d["task_embedding"]),
                   d["baseline_score"], d["teacher_score"], d["n_examples"])


def featurize_dataset(corpus: Sequence[Sequence], description: Sequence[str], table: EmbeddingTable,
                      baseline_score: float, teacher_score: float, idf: Idf) -> DatasetFeatures:
    """IDF-weighted mean word vector of the corpus plus the mean vector of the description."""
    words = [w for seq in corpus for w in token_words(seq)]
    if not words:
        raise ValueError("empty corpus")
    ctx = np.zeros(table.dim)
    counts: dict[str, int] = {}
    for w in words:
        counts[w] = counts.get(w, 0) + 1
    for w, c in counts.items():
        ctx += c * idf(w) * table[w]
    ctx /= len(words)
    desc = token_words(description)
    task = np.mean([table[w] for w in desc], axis=0) if desc else np.zeros(table.dim)
    return DatasetFeatures(ctx, task, float(baseline_score), float(teacher_score), len(corpus))


def encode_config(cfg: DistillerConfig, labels: dict[str, list[str]]) -> np.ndarray:
    """One-hot per axis; a value the schema has not seen encodes as all zeros."""
    axes = cfg.axes()
    parts = []
    for axis, levels in labels.items():
        v = np.zeros(len(levels))
        if axes[axis] in levels:
            v[levels.index(axes[axis])] = 1.0
        parts.append(v)
    return np.concatenate(parts)


# ------------------------------------------------------ boosted trees

@dataclass(frozen=True)
class GBRTSettings:
    n_rounds: int = 200
    max_depth: int = 3
    shrinkage: float = 0.1
    subsample: float = 0.8
    min_leaf: int = 1


@dataclass
class Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def leaf_of(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        for _ in range(64):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = x[np.arange(len(x)), np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_of(x)]


def _best_split(x: np.ndarray, r: np.ndarray, min_leaf: int):
    n = len(r)
    total = r.sum()
    base = total * total / n
    best = (1e-12, -1, 0.0)
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs, rs = x[order, f], r[order]
        cs = np.cumsum(rs)[:-1]
        nl = np.arange(1, n)
        ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        gain = cs ** 2 / nl + (total - cs) ** 2 / (n - nl) - base
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            best = (float(gain[k]), f, 0.5 * (xs[k] + xs[k + 1]))
    return best


def fit_tree(x: np.ndarray, r: np.ndarray, max_depth: int, min_leaf: int = 1) -> Tree:
    """Least-squares regression tree grown greedily to ``max_depth``."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(r[idx].mean()))
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            return node
        gain, f, thr = _best_split(x[idx], r[idx], min_leaf)
        if f < 0:
            return node
        mask = x[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(r)), 0)
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                np.array(value))


@dataclass
class MetaModel:
    init: float
    trees: list[Tree]
    shrinkage: float
    labels: dict[str, list[str]]
    n_features: int
    train_loss: list[float] = field(default_factory=list)

    def predict_matrix(self, x: np.ndarray) -> np.ndarray:
        out = np.full(len(x), self.init)
        for t in self.trees:
            out += self.shrinkage * t.predict(x)
        return out

    def design(self, features: DatasetFeatures, configs: Sequence[DistillerConfig]) -> np.ndarray:
        fv = features.vector()
        return np.array([np.concatenate([fv, encode_config(c, self.labels)]) for c in configs])

    def predict(self, features: DatasetFeatures, configs: Sequence[DistillerConfig]) -> np.ndarray:
        return self.predict_matrix(self.design(features, configs))


def fit_gbrt(x: np.ndarray, y: np.ndarray, settings: GBRTSettings = GBRTSettings(), seed: int = 0):
    """Stage-wise squared-error boosting.

    Each tree's structure comes from a row subsample; its leaf values are then
    refit on all rows, so the full training loss can only go down.
    Rows are put in canonical order first, which makes the fit independent of
    the order they arrive in.
    """
    x, y = np.asarray(x, np.float64), np.asarray(y, np.float64)
    order = np.lexsort(np.column_stack([x, y]).T[::-1])
    x, y = x[order], y[order]
    n = len(y)
    rng = rng_stream(seed, "gbrt")
    init = float(y.mean())
    pred = np.full(n, init)
    trees, loss = [], [float(((y - pred) ** 2).mean())]
    m = max(1, int(math.ceil(settings.subsample * n)))
    for _ in range(settings.n_rounds):
        resid = y - pred
        sub = np.sort(rng.choice(n, size=m, replace=False)) if m < n else np.arange(n)
        tree = fit_tree(x[sub], resid[sub], settings.max_depth, settings.min_leaf)
        leaves = tree.leaf_of(x)
        for leaf in np.unique(leaves):
            tree.value[leaf] = resid[leaves == leaf].mean()
        pred = pred + settings.shrinkage * tree.value[leaves]
        trees.append(tree)
        loss.append(float(((y - pred) ** 2).mean()))
    return init, trees, loss


@dataclass
class MetaRow:
    dataset_id: str
    features: DatasetFeatures
    config: DistillerConfig
    ratio: float

    def to_dict(self) -> dict:
        return {"dataset_id": self.dataset_id, "features": self.features.to_dict(),
                "config": self.config.to_dict(), "distillation_ratio": self.ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "MetaRow":
        return cls(d["dataset_id"], DatasetFeatures.from_dict(d["features"]),
                   DistillerConfig.from_dict(d["config"]), float(d["distillation_ratio"]))


def train_meta(rows: Sequence[MetaRow], settings: GBRTSettings = GBRTSettings(), seed: int = 0,
               space: SearchSpace | None = None) -> MetaModel:
    if len(rows) < 10:
        raise ValueError(f"need >= 10 meta rows, got {len(rows)}")
    labels = (space or SearchSpace()).axis_labels()
    x = np.array([np.concatenate([r.features.vector(), encode_config(r.config, labels)]) for r in rows])
    y = np.array([r.ratio for r in rows])
    init, trees, loss = fit_gbrt(x, y, settings, seed)
    return MetaModel(init, trees, settings.shrinkage, labels, x.shape[1], loss)


def recommend(model: MetaModel, features: DatasetFeatures, space: SearchSpace, n: int,
              **base) -> list[tuple[DistillerConfig, float]]:
    """Top ``n`` configs by predicted ratio; ties keep canonical space order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    configs = space.configs(**base)
    pred = model.predict(features, configs)
    order = np.argsort(-pred, kind="stable")[:n]
    return [(configs[i], float(pred[i])) for i in order]


# ------------------------------------------------------------ evaluation

def spearman(xs, ys) -> float | None:
    """Rank correlation with mid-ranks for ties; ``None`` when either side has no rank spread."""
    xs, ys = np.asarray(xs, np.float64), np.asarray(ys, np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("spearman needs two equal-length sequences of length >= 2")
    rx, ry = rankdata(xs), rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    if den == 0.0:
        return None
    return float(np.clip((rx * ry).sum() / den, -1.0, 1.0))


@dataclass
class LodoResult:
    per_dataset: dict[str, float | None]
    mean: float | None
    skipped: list[str]

    def to_dict(self) -> dict:
        return {"per_dataset": self.per_dataset, "mean": self.mean, "skipped": self.skipped}


def lodo_eval(rows: Sequence[MetaRow], settings: GBRTSettings = GBRTSettings(), seed: int = 0,
              min_rows: int = 5) -> LodoResult:
    """Leave-one-dataset-out: fit on the rest, rank-correlate predictions on the held-out set."""
    ids = sorted({r.dataset_id for r in rows})
    if len(ids) < 2:
        raise ValueError("need rows from >= 2 datasets")
    per, skipped = {}, []
    for did in ids:
        test = [r for r in rows if r.dataset_id == did]
        if len(test) < min_rows:
            raise ValueError(f"dataset {did!r} has {len(test)} rows; need >= {min_rows}")
        model = train_meta([r for r in rows if r.dataset_id != did], settings, seed)
        pred = model.predict_matrix(np.array([np.concatenate(
            [r.features.vector(), encode_config(r.config, model.labels)]) for r in test]))
        rho = spearman(pred, [r.ratio for r in test])
        per[did] = rho
        if rho is None:
            skipped.append(did)
    vals = [v for v in per.values() if v is not None]
    return LodoResult(per, float(np.mean(vals)) if vals else None, skipped)


def planted_meta_rows(n_datasets: int = 4, rows_per_dataset: int = 50, seed: int = 0,
                      noise: float = 0.005, space: SearchSpace | None = None,
                      dim: int = 16) -> tuple[list[MetaRow], DistillerConfig]:
    """Synthetic meta-data whose ratio rises monotonically with a fixed score per axis level.

    Returns the rows and the config with the highest planted score.
    """
    space = space or SearchSpace()
    rng = rng_stream(seed, "planted-meta")
    labels = space.axis_labels()
    # evenly spaced level scores in random order; the top level of each axis gets a clear margin
    effect = {}
    for a, v in labels.items():
        e = np.linspace(0.0, 0.1, len(v))
        e[-1] += 0.1
        effect[a] = e[rng.permutation(len(v))]
    axes_values = {"inter_loss": space.inter_loss, "pred_loss": space.pred_loss,
                   "mapping": space.mapping, "aug": space.aug}

    def score(cfg):
        ax = cfg.axes()
        return sum(effect[a][labels[a].index(ax[a])] for a in labels)

    best = DistillerConfig(**{a: axes_values[a][int(np.argmax(effect[a]))] for a in labels})
    rows = []
    for d in range(n_datasets):
        feats = DatasetFeatures(rng.normal(size=dim), rng.normal(size=dim), float(rng.uniform(0.5, 0.7)),
                                float(rng.uniform(0.85, 0.95)), int(rng.integers(200, 5000)))
        offset = rng.uniform(0.0, 0.2)
        for _ in range(rows_per_dataset):
            cfg = space.sample(rng)
            rows.append(MetaRow(f"planted-{d}", feats, cfg,
                                float(0.4 + offset + score(cfg) + rng.normal(0, noise))))
    return rows, best


# ------------------------------------------------------------ persistence

def meta_to_dict(model: MetaModel, idf: Idf | None = None) -> dict:
    trees = [{"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
              "left": t.left.tolist(), "right": t.right.tolist(), "value": t.value.tolist()}
             for t in model.trees]
    d = {"init": model.init, "shrinkage": model.shrinkage, "labels": model.labels,
         "n_features": model.n_features, "train_loss": model.train_loss, "trees": trees}
    if idf is not None:
        d["idf"] = {"n_datasets": idf.n_datasets, "doc_freq": dict(sorted(idf.doc_freq.items()))}
    return d


def meta_from_dict(d: dict) -> tuple[MetaModel, Idf | None]:
    trees = [Tree(np.array(t["feature"], dtype=np.int64), np.array(t["threshold"], dtype=np.float64),
                  np.array(t["left"], dtype=np.int64), np.array(t["right"], dtype=np.int64),
                  np.array(t["value"], dtype=np.float64)) for t in d["trees"]]
    model = MetaModel(d["init"], trees, d["shrinkage"], {k: list(v) for k, v in d["labels"].items()},
                      d["n_features"], list(d.get("train_loss", [])))
    idf = Idf(d["idf"]["n_datasets"], dict(d["idf"]["doc_freq"])) if "idf" in d else None
    return model, idf
