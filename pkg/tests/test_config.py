import numpy as np
import pytest

from distiller.augment import AugPolicy
from distiller.config import (PRESETS, DistillerConfig, SearchSpace, config_from_kv, preset)
from distiller.io import ConfigError
from distiller.losses import InterLossKind


def test_weight_defaults_without_augmentation():
    c = DistillerConfig()
    assert (c.beta1, c.beta2, c.gamma1, c.gamma2) == (1.0, 0.0, 0.0, 0.0)


def test_weight_defaults_with_augmentation():
    c = DistillerConfig(aug=AugPolicy(("RA",)))
    assert (c.beta1, c.beta2, c.gamma1, c.gamma2) == (1.0, 1.0, 0.5, 0.5)


def test_defaults_follow_recommended_settings():
    c = DistillerConfig()
    assert c.inter_loss == InterLossKind("MI_alpha", 0.9) and c.mapping == "Skip"
    assert c.batch_size == 16 and c.learning_rate == 5e-5 and c.epochs == 20


@pytest.mark.parametrize("kw", [
    dict(pred_loss="KL"), dict(mapping="Random"), dict(beta1=-1.0), dict(beta2=1.0),
    dict(batch_size=1), dict(learning_rate=0.0), dict(epochs=-1),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        DistillerConfig(**kw)


def test_dict_round_trip():
    c = DistillerConfig(inter_loss=InterLossKind("Cos"), aug=AugPolicy(("CA", "Mixup")), seed=4)
    assert DistillerConfig.from_dict(c.to_dict()) == c


def test_presets():
    assert set(PRESETS) == {"tinybert-style", "bert-emd-style", "mixkd-style"}
    tb = preset("tinybert-style")
    assert tb.inter_loss.kind == "MSE" and tb.mapping == "Skip" and tb.aug.ops == ("CA",)
    assert preset("bert-emd-style").mapping == "EMD"
    assert preset("mixkd-style").aug.uses_mixup
    with pytest.raises(ConfigError):
        preset("nope")


def test_config_from_kv():
    c = config_from_kv({"inter_loss.kind": "MI_alpha", "inter_loss.alpha": "0.5",
                        "aug.ops": "Mixup,CA", "epochs": "3", "batch_size": "8"}, seed=11)
    assert c.inter_loss == InterLossKind("MI_alpha", 0.5)
    assert c.aug.ops == ("CA", "Mixup") and c.epochs == 3 and c.seed == 11
    assert config_from_kv({"preset": "bert-emd-style", "mapping": "Last"}).mapping == "Last"


@pytest.mark.parametrize("kv", [{"epochs": "x"}, {"aug.ops": "ZZ"}, {"preset": "nope"},
                                {"inter_loss.kind": "KL"}])
def test_config_from_kv_errors(kv):
    with pytest.raises(ConfigError):
        config_from_kv(kv)


def test_search_space_size_and_labels():
    sp = SearchSpace()
    assert sp.size() == 768 == len(sp.configs())
    labels = sp.axis_labels()
    assert len(labels["inter_loss"]) == 8 and len(labels["aug"]) == 16
    assert "MI_alpha@0.9" in labels["inter_loss"]


def test_sampled_configs_lie_in_space():
    sp = SearchSpace()
    rng = np.random.default_rng(0)
    for _ in range(30):
        assert sp.contains(sp.sample(rng, epochs=1))
    assert not sp.contains(DistillerConfig(inter_loss=InterLossKind("MI_alpha", 0.3)))
