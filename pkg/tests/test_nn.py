import numpy as np
import pytest

from distiller.autograd import Tensor, check_gradients
from distiller.nn import (Adam, EncoderModel, EncoderSpec, OptimState, encoder_forward,
                          load_checkpoint, masked_mean, optimizer_step, rng_stream,
                          save_checkpoint)

SMALL = EncoderSpec(n_layers=2, h_units=8, h_mid=12, n_heads=2, vocab_size=20, n_classes=3)


def test_rng_streams_are_independent_and_reproducible():
    a1 = rng_stream(5, "data-order").random(4)
    a2 = rng_stream(5, "data-order").random(4)
    b = rng_stream(5, "augmentation").random(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


def test_encoder_shapes_classification():
    m = EncoderModel(SMALL, seed=0)
    logits, states = encoder_forward(m, [1, 2, 3, 4, 5])
    assert logits.shape == (1, 3)
    assert len(states) == 2 and all(s.shape == (5, 8) for s in states)


def test_encoder_shapes_tagging():
    m = EncoderModel(EncoderSpec(n_layers=1, h_units=8, h_mid=8, n_heads=2, vocab_size=20,
                                 n_classes=4, head_kind="tagging"), seed=0)
    logits, states = encoder_forward(m, [1, 2, 3])
    assert logits.shape == (3, 4)


def test_encoder_accepts_embedded_input():
    m = EncoderModel(SMALL, seed=0)
    ids = np.array([3, 4, 5])
    via_ids, _ = encoder_forward(m, ids)
    via_emb, _ = encoder_forward(m, m.tok.data[ids])
    np.testing.assert_allclose(via_ids.data, via_emb.data)


def test_empty_sequence_rejected():
    m = EncoderModel(SMALL, seed=0)
    with pytest.raises(ValueError):
        encoder_forward(m, [])
    with pytest.raises(ValueError):
        encoder_forward(m, np.zeros((0, 8)))


def test_out_of_range_token_rejected():
    with pytest.raises(ValueError):
        EncoderModel(SMALL).forward(np.array([[25]]))


def test_padding_does_not_change_classification_logits():
    m = EncoderModel(SMALL, seed=1)
    short, _ = m.forward(np.array([[4, 5, 6]]), np.ones((1, 3), bool))
    padded, _ = m.forward(np.array([[4, 5, 6, 0, 0]]), np.array([[1, 1, 1, 0, 0]], bool))
    np.testing.assert_allclose(short.data, padded.data, atol=1e-10)


def test_masked_mean():
    x = Tensor(np.arange(12.0).reshape(1, 4, 3))
    out = masked_mean(x, np.array([[1, 1, 0, 0]], bool))
    np.testing.assert_allclose(out.data, [[1.5, 2.5, 3.5]])


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec(h_units=10, n_heads=3)
    with pytest.raises(ValueError):
        EncoderSpec(n_layers=0)


def test_encoder_gradients():
    spec = EncoderSpec(n_layers=1, h_units=4, h_mid=4, n_heads=2, vocab_size=6, n_classes=2)
    m = EncoderModel(spec, seed=2)
    tgt = np.array([[1.0, 0.0]])
    from distiller import autograd as ag

    def loss():
        logits, _ = m.forward(np.array([[1, 2, 3]]))
        return -(ag.log_softmax(logits, -1) * tgt).sum()

    assert check_gradients(loss, m.parameters()[:6]) < 1e-5


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -7.0, 0.0])]
    st = OptimState(lr=0.01)
    optimizer_step(st, p, g)
    np.testing.assert_allclose(p[0], [1.0 - 0.01, -2.0 + 0.01, 0.5], atol=1e-8)
    assert st.step == 1


def test_adam_zero_gradient_leaves_params():
    p = [np.ones(3)]
    optimizer_step(OptimState(), p, [np.zeros(3)])
    np.testing.assert_array_equal(p[0], np.ones(3))


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        optimizer_step(OptimState(), [np.ones(3)], [np.ones(2)])


def test_adam_clipping_bounds_update():
    t = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([t], lr=0.1, clip=1.0)
    t.grad = np.array([300.0, 400.0])
    opt.step()
    np.testing.assert_allclose(np.abs(t.data), 0.1, atol=1e-6)


def test_checkpoint_round_trip(tmp_path):
    m = EncoderModel(SMALL, seed=3)
    save_checkpoint(m, tmp_path / "m.json")
    m2 = load_checkpoint(tmp_path / "m.json")
    ids = np.array([[1, 2, 3]])
    np.testing.assert_array_equal(m.forward(ids)[0].data, m2.forward(ids)[0].data)
    assert m2.spec == m.spec


def test_load_state_dict_rejects_mismatch():
    m = EncoderModel(SMALL)
    with pytest.raises(ValueError):
        m.load_state_dict({"tok": np.zeros((1, 1))})
