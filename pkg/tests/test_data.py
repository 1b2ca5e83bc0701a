import numpy as np
import pytest

from distiller.data import (NEGATION_TASK, TaskSpec, from_records, load_jsonl, make_splits,
                            make_task, read_lexicon, save_jsonl, synthetic_lexicon, unigram_table,
                            write_lexicon)
from distiller.io import ConfigError, config_hash, parse_kv


def test_generation_is_deterministic():
    a = make_task(TaskSpec(), 50, seed=9)
    b = make_task(TaskSpec(), 50, seed=9)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    np.testing.assert_array_equal(a.labels, b.labels)


@pytest.mark.parametrize("spec", [TaskSpec(), NEGATION_TASK, TaskSpec(task_kind="tagging")])
def test_generated_ids_in_range(spec):
    ds = make_task(spec, 40, seed=1)
    assert ds.tokens.min() >= 0 and ds.tokens.max() < spec.vocab_size
    assert ds.labels.min() >= 0 and ds.labels.max() < spec.n_classes
    assert ds.mask.any(axis=1).all()


def test_splits_have_requested_sizes():
    sp = make_splits(TaskSpec(), 30, 10, 20, seed=0)
    assert [len(sp[k]) for k in ("train", "dev", "test")] == [30, 10, 20]


def test_jsonl_round_trip(tmp_path, tiny_tag_splits):
    ds = tiny_tag_splits["train"]
    save_jsonl(ds, tmp_path / "t.jsonl")
    back = load_jsonl(tmp_path / "t.jsonl", ds.vocab_size, ds.n_classes)
    assert back.records() == ds.records()


def test_from_records_rejects_empty_sequence():
    with pytest.raises(ValueError):
        from_records([{"tokens": [], "label": 0}])


def test_lexicon_round_trip(tmp_path):
    lex = synthetic_lexicon(TaskSpec(), seed=0)
    write_lexicon(lex, tmp_path / "lex.tsv")
    assert read_lexicon(tmp_path / "lex.tsv") == lex


def test_unigram_sums_to_one(tiny_splits):
    u = unigram_table(tiny_splits["train"])
    assert u.shape == (64,) and abs(u.sum() - 1) < 1e-12 and u[0] == 0


def test_parse_kv():
    assert parse_kv("a = 1  # note\n\nb=x y\n") == {"a": "1", "b": "x y"}
    with pytest.raises(ConfigError):
        parse_kv("novalue\n")


def test_config_hash_ignores_order():
    assert config_hash({"a": "1", "b": "2"}) == config_hash({"b": "2", "a": "1"})
