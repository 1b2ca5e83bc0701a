import itertools
import json
import threading

import numpy as np
import pytest

from distiller.config import DistillerConfig, SearchSpace
from distiller.losses import InterLossKind
from distiller.pipeline import RunRecord
from distiller.search import (brute_force_anova, fanova_importance, grid_from_records, mean_report,
                              random_search, sample_configs)


def fake_runner(cfg, trial):
    score = 0.5 + 0.1 * (cfg.mapping == "EMD") + 0.01 * (cfg.seed % 3)
    return RunRecord(cfg, "fake", "classification", 1.0, score, score, cfg.seed)


def test_sample_configs_seeds_and_determinism():
    a = sample_configs(SearchSpace(), 5, 100, epochs=1)
    b = sample_configs(SearchSpace(), 5, 100, epochs=1)
    assert a == b and [c.seed for c in a] == list(range(100, 105))
    assert sample_configs(SearchSpace(), 0, 1) == []
    with pytest.raises(ValueError):
        sample_configs(SearchSpace(), -1, 1)


def test_random_search_order_independent_of_workers():
    seq = random_search(SearchSpace(), 8, 3, fake_runner, workers=1, epochs=1)
    par = random_search(SearchSpace(), 8, 3, fake_runner, workers=4, epochs=1)
    assert [r.to_dict() for r in seq] == [r.to_dict() for r in par]
    assert [r.trial for r in seq] == list(range(8))


def test_failed_trial_is_recorded_and_search_continues():
    def flaky(cfg, trial):
        if trial == 2:
            raise RuntimeError("boom")
        return fake_runner(cfg, trial)
    recs = random_search(SearchSpace(), 4, 0, flaky, workers=2, epochs=1)
    assert [r.status for r in recs] == ["ok", "ok", "failed", "ok"]
    assert "boom" in recs[2].error and np.isnan(recs[2].distillation_ratio)


def test_workers_really_run_concurrently():
    seen = set()
    barrier = threading.Barrier(2, timeout=5)

    def runner(cfg, trial):
        seen.add(threading.get_ident())
        barrier.wait()
        return fake_runner(cfg, trial)
    random_search(SearchSpace(), 2, 0, runner, workers=2, epochs=1)
    assert len(seen) == 2


# ---------------------------------------------------------------- ANOVA

def planted_grid():
    a = np.array([0.0, 1.0, 2.0])
    b = np.array([0.0, 0.5])
    c = np.array([0.0, 0.0, 0.3, 0.1])
    inter = np.array([[0.2, -0.2], [-0.2, 0.2], [0.0, 0.0]])
    return a[:, None, None] + b[None, :, None] + c[None, None, :] + inter[:, :, None]


def test_brute_force_anova_on_planted_function():
    g = planted_grid()
    rep = brute_force_anova(g, ["a", "b", "c"])
    total = g.var()
    a_main = np.array([0.0, 1.0, 2.0]) - 1.0
    assert rep.total_variance == pytest.approx(total)
    assert rep.individual["a"] == pytest.approx((a_main ** 2).mean() / total)
    c = np.array([0.0, 0.0, 0.3, 0.1])
    assert rep.individual["c"] == pytest.approx(((c - c.mean()) ** 2).mean() / total)
    inter = np.array([[0.2, -0.2], [-0.2, 0.2], [0.0, 0.0]])
    assert rep.pairwise["a|b"] == pytest.approx((inter ** 2).mean() / total)
    assert rep.pairwise["a|c"] == pytest.approx(0.0, abs=1e-12)
    assert sum(rep.individual.values()) + sum(rep.pairwise.values()) == pytest.approx(1.0)


def test_constant_scores_give_zero_importance():
    rep = brute_force_anova(np.full((2, 3), 0.7), ["x", "y"])
    assert rep.degenerate and all(v == 0 for v in rep.individual.values())


def test_incomplete_grid_rejected():
    g = planted_grid()
    g[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="incomplete"):
        brute_force_anova(g)


def records_from_grid(g, axes):
    levels = [[f"{ax}{k}" for k in range(n)] for ax, n in zip(axes, g.shape)]
    return [({ax: lv[i] for ax, lv, i in zip(axes, levels, idx)}, float(g[idx]))
            for idx in itertools.product(*[range(n) for n in g.shape])]


def test_fanova_recovers_planted_importances():
    g = planted_grid()
    recs = records_from_grid(g, ["a", "b", "c"])
    rep = fanova_importance(recs, ["a", "b", "c"], seed=0)
    exact = brute_force_anova(g, ["a", "b", "c"])
    for k in exact.individual:
        assert rep.individual[k] == pytest.approx(exact.individual[k], abs=0.05)
    for k in exact.pairwise:
        assert rep.pairwise[k] == pytest.approx(exact.pairwise[k], abs=0.05)


def test_fanova_is_invariant_to_record_order():
    recs = records_from_grid(planted_grid(), ["a", "b", "c"])
    shuffled = [recs[i] for i in np.random.default_rng(0).permutation(len(recs))]
    assert fanova_importance(recs).to_dict() == fanova_importance(shuffled).to_dict()


def test_fanova_errors_and_failed_records():
    recs = records_from_grid(planted_grid(), ["a", "b", "c"])
    with pytest.raises(ValueError):
        fanova_importance(recs[:5])
    single = [({"a": "x", "b": b}, float(i)) for i, b in enumerate("pqrstuvwxyzabcdefghijk")]
    with pytest.raises(ValueError, match="single value"):
        fanova_importance(single)
    rep = fanova_importance(recs + [({"a": "a0", "b": "b0", "c": "c0"}, float("nan"))])
    assert rep.n_failed == 1 and rep.n_records == len(recs)


def test_fanova_constant_scores():
    recs = records_from_grid(np.ones((3, 2, 4)), ["a", "b", "c"])
    rep = fanova_importance(recs)
    assert rep.degenerate


def test_fanova_accepts_run_records():
    cfgs = SearchSpace(inter_loss=(InterLossKind("MSE"), InterLossKind("Cos"))).configs(epochs=1)
    recs = [fake_runner(c, 0) for c in cfgs]
    rep = fanova_importance(recs, dataset_id="fake")
    assert rep.individual["mapping"] > 0.9 and rep.dataset_id == "fake"


def test_grid_from_records():
    g = planted_grid()
    grid, axes, levels = grid_from_records(records_from_grid(g, ["a", "b", "c"]), ["a", "b", "c"])
    np.testing.assert_allclose(grid, g)
    with pytest.raises(ValueError):
        grid_from_records(records_from_grid(g, ["a", "b", "c"])[:-1], ["a", "b", "c"])


def test_report_serialization_and_mean():
    rep = brute_force_anova(planted_grid(), ["a", "b", "c"])
    doc = json.loads(rep.to_json())
    assert doc["individual"] == rep.individual
    assert rep.to_csv().splitlines()[0] == "dataset_id,kind,component,importance"
    m = mean_report([rep, rep])
    assert m.individual == pytest.approx(rep.individual)
    with pytest.raises(ValueError):
        mean_report([])
