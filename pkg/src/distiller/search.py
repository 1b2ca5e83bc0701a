"""Random search over the distillation space and functional-ANOVA importance."""
from __future__ import annotations

import csv
import io as _io
import itertools
import json
import math
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .config import DistillerConfig, SearchSpace
from .nn import rng_stream
from .pipeline import RunRecord

Runner = Callable[[DistillerConfig, int], RunRecord]


def sample_configs(space: SearchSpace, budget: int, base_seed: int, **base) -> list[DistillerConfig]:
    """``budget`` uniform draws; trial ``k`` trains with seed ``base_seed + k``."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    rng = rng_stream(base_seed, "search")
    base = {k: v for k, v in base.items() if k != "seed"}
    return [replace(space.sample(rng, **base), seed=base_seed + k) for k in range(budget)]


def _failed(cfg: DistillerConfig, trial: int, exc: BaseException) -> RunRecord:
    msg = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return RunRecord(cfg, "", "", float("nan"), float("nan"), float("nan"), cfg.seed,
                     status="failed", error=msg, trial=trial)


def random_search(space: SearchSpace, budget: int, base_seed: int, runner: Runner,
                  workers: int = 1, **base) -> list[RunRecord]:
    """Run ``runner(config, trial)`` on each sampled config.

    A runner exception marks that trial failed and the search carries on.
    Records come back in trial order whatever order the workers finish in.
    """
    configs = sample_configs(space, budget, base_seed, **base)

    def one(k: int) -> RunRecord:
        try:
            rec = runner(configs[k], k)
        except Exception as exc:  # noqa: BLE001 - a failed trial must not stop the search
            return _failed(configs[k], k, exc)
        rec.trial = k
        return rec

    if workers <= 1:
        return [one(k) for k in range(budget)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        out = list(ex.map(one, range(budget)))
    return out


# ------------------------------------------------------------------ ANOVA

def _pair_key(a: str, b: str) -> str:
    return f"{a}|{b}"


@dataclass
class ImportanceReport:
    """Variance fractions of single axes and axis pairs.

    ``total_variance == 0`` flags a degenerate score column; every fraction is
    then 0.
    """
    axes: list[str]
    individual: dict[str, float]
    pairwise: dict[str, float]
    total_variance: float
    grand_mean: float = 0.0
    n_records: int = 0
    n_failed: int = 0
    dataset_id: str | None = None
    levels: dict = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        return self.total_variance == 0.0

    def to_dict(self) -> dict:
        return {"axes": self.axes, "individual": self.individual, "pairwise": self.pairwise,
                "total_variance": self.total_variance, "grand_mean": self.grand_mean,
                "degenerate": self.degenerate, "n_records": self.n_records,
                "n_failed": self.n_failed, "dataset_id": self.dataset_id}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset_id", "kind", "component", "importance"])
        for a in self.axes:
            w.writerow([self.dataset_id or "", "individual", a, f"{self.individual[a]:.10g}"])
        for k, v in self.pairwise.items():
            w.writerow([self.dataset_id or "", "pairwise", k, f"{v:.10g}"])
        return buf.getvalue()


def brute_force_anova(grid: np.ndarray, axes: Sequence[str] | None = None) -> ImportanceReport:
    """Exact functional ANOVA of a full factorial table (one array dimension per axis)."""
    f = np.asarray(grid, dtype=np.float64)
    if f.ndim < 1 or f.size == 0:
        raise ValueError("empty grid")
    if not np.all(np.isfinite(f)):
        raise ValueError("grid is incomplete: every cell needs a finite score")
    axes = list(axes) if axes is not None else [f"x{k}" for k in range(f.ndim)]
    if len(axes) != f.ndim:
        raise ValueError("one axis name per grid dimension")
    mu = f.mean()
    total = float(((f - mu) ** 2).mean())
    k = f.ndim
    mains = {}
    for a in range(k):
        others = tuple(x for x in range(k) if x != a)
        mains[a] = f.mean(axis=others) - mu if others else f - mu
    pairs = {}
    for a, b in itertools.combinations(range(k), 2):
        others = tuple(x for x in range(k) if x not in (a, b))
        m_ab = f.mean(axis=others) if others else f
        pairs[(a, b)] = m_ab - mu - mains[a][:, None] - mains[b][None, :]
    if total <= 1e-30 * max(1.0, mu * mu):
        return ImportanceReport(axes, {n: 0.0 for n in axes},
                                {_pair_key(axes[a], axes[b]): 0.0 for a, b in pairs}, 0.0, float(mu))
    ind = {axes[a]: float((mains[a] ** 2).mean() / total) for a in range(k)}
    pw = {_pair_key(axes[a], axes[b]): float((v ** 2).mean() / total) for (a, b), v in pairs.items()}
    return ImportanceReport(axes, ind, pw, total, float(mu))


def _as_rows(records) -> tuple[list[dict], list[float], int]:
    rows, ys, failed = [], [], 0
    for r in records:
        if isinstance(r, RunRecord):
            if r.status != "ok" or not np.isfinite(r.distillation_ratio):
                failed += 1
                continue
            rows.append(r.config.axes())
            ys.append(float(r.distillation_ratio))
        else:
            axes, y = r
            if y is None or not np.isfinite(y):
                failed += 1
                continue
            rows.append({k: str(v) for k, v in axes.items()})
            ys.append(float(y))
    return rows, ys, failed


def grid_from_records(records, axes: Sequence[str] | None = None):
    """Full factorial table (mean score per cell) from ``(axes_dict, score)`` pairs."""
    rows, ys, _ = _as_rows(records)
    axes = list(axes) if axes is not None else sorted(rows[0])
    levels = {a: sorted({r[a] for r in rows}) for a in axes}
    shape = tuple(len(levels[a]) for a in axes)
    tot, cnt = np.zeros(shape), np.zeros(shape)
    for r, y in zip(rows, ys):
        idx = tuple(levels[a].index(r[a]) for a in axes)
        tot[idx] += y
        cnt[idx] += 1
    if np.any(cnt == 0):
        raise ValueError("grid is incomplete: some axis combinations have no record")
    return tot / cnt, axes, levels


def fanova_importance(records, axes: Sequence[str] | None = None, seed: int = 0,
                      n_trees: int = 64, min_records: int = 20, bootstrap: bool = False,
                      dataset_id: str | None = None) -> ImportanceReport:
    """Forest-based importance of each axis and axis pair.

    A random forest is fitted on one-hot axis values, its predictions are
    taken over the full grid of observed levels, and that grid is decomposed
    exactly. Marginals therefore average the forest over the other axes.
    Failed records are dropped and counted. Bootstrap is off by default: with
    one record per cell, out-of-bag cells pull every marginal toward the mean.
    """
    rows, ys, failed = _as_rows(records)
    if len(rows) < min_records:
        raise ValueError(f"need >= {min_records} successful records, got {len(rows)}")
    axes = list(axes) if axes is not None else sorted(rows[0])
    # canonical order so the report does not depend on record order
    order = sorted(range(len(rows)), key=lambda i: (tuple(rows[i][a] for a in axes), ys[i]))
    rows, ys = [rows[i] for i in order], np.array([ys[i] for i in order])
    levels = {a: sorted({r[a] for r in rows}) for a in axes}
    thin = [a for a in axes if len(levels[a]) < 2]
    if thin:
        raise ValueError(f"axes {thin} take a single value; need >= 2 per axis")

    offsets = np.cumsum([0] + [len(levels[a]) for a in axes])

    def encode(idx_rows: np.ndarray) -> np.ndarray:
        x = np.zeros((len(idx_rows), offsets[-1]))
        for k in range(len(axes)):
            x[np.arange(len(idx_rows)), offsets[k] + idx_rows[:, k]] = 1.0
        return x

    codes = np.array([[levels[a].index(r[a]) for a in axes] for r in rows])
    if np.ptp(ys) == 0:
        rep = brute_force_anova(np.full([len(levels[a]) for a in axes], ys[0]), axes)
    else:
        n_cols = offsets[-1]
        want = math.ceil(math.sqrt(len(axes)))
        # axis subsetting approximated by the matching share of one-hot columns
        share = min(1.0, want / len(axes))
        forest = RandomForestRegressor(n_estimators=n_trees, max_features=max(share, 1.0 / n_cols),
                                       bootstrap=bootstrap, random_state=seed, n_jobs=1)
        forest.fit(encode(codes), ys)
        grid_idx = np.array(list(itertools.product(*[range(len(levels[a])) for a in axes])))
        pred = forest.predict(encode(grid_idx)).reshape([len(levels[a]) for a in axes])
        rep = brute_force_anova(pred, axes)
    rep.n_records, rep.n_failed, rep.dataset_id, rep.levels = len(rows), failed, dataset_id, levels
    return rep


def mean_report(reports: Sequence[ImportanceReport]) -> ImportanceReport:
    """Unweighted mean of per-dataset importances."""
    if not reports:
        raise ValueError("no reports")
    axes = reports[0].axes
    ind = {a: float(np.mean([r.individual[a] for r in reports])) for a in axes}
    pw = {k: float(np.mean([r.pairwise[k] for r in reports])) for k in reports[0].pairwise}
    return ImportanceReport(axes, ind, pw, float(np.mean([r.total_variance for r in reports])),
                            float(np.mean([r.grand_mean for r in reports])),
                            sum(r.n_records for r in reports), sum(r.n_failed for r in reports),
                            "mean")
