import math

import numpy as np
import pytest

from distiller.autodistiller import (DatasetFeatures, GBRTSettings, Idf, MetaRow, build_idf,
                                     default_embeddings, encode_config, featurize_dataset,
                                     fit_gbrt, fit_tree, lodo_eval, meta_from_dict, meta_to_dict,
                                     planted_meta_rows, read_embeddings, recommend, spearman,
                                     token_words, train_meta)
from distiller.config import DistillerConfig, SearchSpace
from distiller.losses import InterLossKind

FAST = GBRTSettings(n_rounds=40, max_depth=3, shrinkage=0.2, subsample=0.8)


def test_spearman_examples():
    assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 1, 1], [1, 2, 3]) is None
    with pytest.raises(ValueError):
        spearman([1], [1])


def test_spearman_ties_use_mid_ranks():
    from scipy.stats import spearmanr
    x, y = [1, 2, 2, 3, 5], [2, 1, 4, 4, 3]
    assert spearman(x, y) == pytest.approx(spearmanr(x, y).statistic)


def test_idf_values():
    idf = build_idf([[[1, 2]], [[2, 3]]])
    assert idf("w1") == pytest.approx(math.log(3 / 2))
    assert idf("w2") == pytest.approx(0.0)
    assert idf("unseen") == pytest.approx(math.log(3))


def test_single_dataset_context_is_zero():
    corpus = [[1, 2, 3], [3, 4]]
    f = featurize_dataset(corpus, ["sentiment"], default_embeddings(), 0.5, 0.9, build_idf([corpus]))
    np.testing.assert_allclose(f.context_embedding, 0.0)
    assert np.abs(f.task_embedding).sum() > 0


def test_context_is_idf_weighted_mean():
    table = default_embeddings()
    a, b = [[1, 1, 2]], [[2, 9]]
    idf = build_idf([a, b])
    f = featurize_dataset(a, [], table, 0.5, 0.9, idf)
    want = (2 * idf("w1") * table["w1"] + idf("w2") * table["w2"]) / 3
    np.testing.assert_allclose(f.context_embedding, want)
    np.testing.assert_allclose(f.task_embedding, 0.0)
    with pytest.raises(ValueError):
        featurize_dataset([], [], table, 0.5, 0.9, idf)


def test_embeddings_file(tmp_path):
    table = default_embeddings()
    assert table.dim == 16 and "w0" in table.vectors
    np.testing.assert_array_equal(table["not-a-word"], np.zeros(16))
    p = tmp_path / "e.txt"
    p.write_text("a\t1 2\nb\t3\n")
    with pytest.raises(ValueError):
        read_embeddings(p)
    assert token_words([3, "x"]) == ["w3", "x"]


def test_features_vector_and_round_trip():
    f = DatasetFeatures(np.ones(2), np.zeros(2), 0.6, 0.9, 100)
    np.testing.assert_allclose(f.vector(), [1, 1, 0, 0, 0.6, 0.9, math.log(100)])
    assert DatasetFeatures.from_dict(f.to_dict()).to_dict() == f.to_dict()
    with pytest.raises(ValueError):
        DatasetFeatures(np.ones(2), np.ones(3), 0.6, 0.9, 100)


def test_encode_config_one_hot_and_unseen():
    labels = SearchSpace().axis_labels()
    v = encode_config(DistillerConfig(), labels)
    assert v.sum() == 4 and v.size == 8 + 2 + 3 + 16
    odd = encode_config(DistillerConfig(inter_loss=InterLossKind("MI_alpha", 0.3)), labels)
    assert odd.sum() == 3


def test_tree_fits_step_function():
    x = np.arange(10.0)[:, None]
    r = np.where(x[:, 0] < 4, -1.0, 2.0)
    tree = fit_tree(x, r, max_depth=1)
    np.testing.assert_allclose(tree.predict(x), r)


def test_gbrt_training_loss_is_monotone_and_order_free():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 3))
    y = np.sin(x[:, 0]) + 0.5 * (x[:, 1] > 0)
    init, trees, loss = fit_gbrt(x, y, FAST, seed=1)
    assert all(b <= a + 1e-12 for a, b in zip(loss, loss[1:]))
    assert loss[-1] < 0.1 * loss[0]
    perm = rng.permutation(60)
    _, trees2, loss2 = fit_gbrt(x[perm], y[perm], FAST, seed=1)
    assert loss2 == loss


def test_planted_recommendation_and_lodo():
    rows, best = planted_meta_rows(n_datasets=3, rows_per_dataset=60, seed=0)
    model = train_meta(rows, FAST)
    top = recommend(model, rows[0].features, SearchSpace(), 3)
    assert top[0][0].axes() == best.axes()
    assert top[0][1] >= top[1][1] >= top[2][1]
    res = lodo_eval(rows, FAST)
    assert res.mean > 0.8 and not res.skipped


def test_recommend_and_train_errors():
    rows, _ = planted_meta_rows(n_datasets=2, rows_per_dataset=6)
    with pytest.raises(ValueError):
        train_meta(rows[:9])
    model = train_meta(rows, FAST)
    with pytest.raises(ValueError):
        recommend(model, rows[0].features, SearchSpace(), 0)
    with pytest.raises(ValueError):
        lodo_eval([r for r in rows if r.dataset_id == "planted-0"])


def test_lodo_skips_constant_fold():
    rows, _ = planted_meta_rows(n_datasets=3, rows_per_dataset=8)
    rows = [MetaRow(r.dataset_id, r.features, r.config, 0.5 if r.dataset_id == "planted-2" else r.ratio)
            for r in rows]
    res = lodo_eval(rows, FAST)
    assert res.skipped == ["planted-2"] and res.per_dataset["planted-2"] is None


def test_model_and_rows_round_trip():
    rows, _ = planted_meta_rows(n_datasets=2, rows_per_dataset=10)
    model = train_meta(rows, FAST)
    idf = Idf(2, {"w1": 1})
    back, idf2 = meta_from_dict(meta_to_dict(model, idf))
    configs = SearchSpace().configs()[:20]
    np.testing.assert_array_equal(back.predict(rows[0].features, configs),
                                  model.predict(rows[0].features, configs))
    assert idf2 == idf
    assert MetaRow.from_dict(rows[0].to_dict()).to_dict() == rows[0].to_dict()
