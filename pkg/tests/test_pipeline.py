import numpy as np
import pytest

from distiller.augment import AugPolicy
from distiller.autograd import check_gradients
from distiller.config import DistillerConfig
from distiller.data import Dataset
from distiller.losses import InterLossKind
from distiller.mi import CriticSpec
from distiller.nn import EncoderModel, EncoderSpec, rng_stream
from distiller.pipeline import (Batch, DistillRunner, RunRecord, distill, distillation_ratio,
                                evaluate, evaluate_detail, init_state, span_f1, total_objective,
                                train_supervised)

SMALL_CRITIC = CriticSpec(n_layers=1, width=4, h_mid=4)


def test_distillation_ratio():
    assert distillation_ratio(48, 50) == pytest.approx(0.96)
    with pytest.raises(ValueError):
        distillation_ratio(1, 0)


class Constant:
    """Stand-in model that always predicts class 0."""
    spec = EncoderSpec(n_classes=2)

    def forward(self, tokens, mask=None):
        from distiller.autograd import Tensor
        return Tensor(np.tile([1.0, 0.0], (len(tokens), 1))), []


def test_constant_predictor_on_balanced_split():
    ds = Dataset(np.ones((4, 2), int), np.ones((4, 2), bool), np.array([0, 1, 0, 1]),
                 "classification", 2, 4)
    assert evaluate(Constant(), ds) == 0.5


def test_evaluate_empty_split():
    ds = Dataset(np.ones((0, 2), int), np.ones((0, 2), bool), np.zeros(0, int), "classification", 2, 4)
    with pytest.raises(ValueError):
        evaluate(Constant(), ds)


def test_evaluate_task_kind_mismatch(tiny_splits, tiny_teacher):
    with pytest.raises(ValueError):
        evaluate(tiny_teacher, tiny_splits["test"], task_kind="tagging")


def test_span_f1():
    gold = np.array([[0, 1, 1, 0, 2]])
    mask = np.ones_like(gold, bool)
    assert span_f1(gold, gold, mask) == 1.0
    pred = np.array([[0, 1, 0, 0, 2]])
    # one of two gold spans recovered, one of two predicted spans correct
    assert span_f1(pred, gold, mask) == pytest.approx(0.5)


def test_tagging_evaluation_reports_span_f1(tiny_tag_splits):
    spec = EncoderSpec(n_layers=1, h_units=4, h_mid=4, n_heads=2, vocab_size=64, n_classes=3,
                       head_kind="tagging")
    d = evaluate_detail(EncoderModel(spec), tiny_tag_splits["test"])
    assert set(d) == {"accuracy", "span_f1"} and 0 <= d["span_f1"] <= 1


def test_supervised_training_reduces_loss(tiny_splits):
    spec = EncoderSpec(n_layers=1, h_units=8, h_mid=8, n_heads=2, vocab_size=64, n_classes=3)
    hist = train_supervised(EncoderModel(spec), tiny_splits["train"], 3, seed=0)
    assert hist[-1] < hist[0]


def test_teacher_beats_chance(tiny_splits, tiny_teacher):
    assert evaluate(tiny_teacher, tiny_splits["train"]) > 0.45


def test_record_round_trip():
    rec = RunRecord(DistillerConfig(), "d", "classification", 0.9, 0.8, 0.8 / 0.9, 3,
                    wall_time=1.5, history=[1.0, 0.5])
    d = rec.to_dict()
    assert "wall_time" not in d and "wall_time" in rec.to_dict(include_time=True)
    back = RunRecord.from_dict(rec.to_dict(include_time=True))
    assert back == rec


@pytest.mark.parametrize("mapping,n_critics", [("Skip", 1), ("EMD", 2)])
def test_init_state_critic_layout(tiny_teacher, student_spec, mapping, n_critics):
    cfg = DistillerConfig(mapping=mapping)
    st = init_state(cfg, tiny_teacher, EncoderModel(student_spec), SMALL_CRITIC)
    assert len(st.critics) == n_critics and len(st.projections) == 1
    assert st.projections[0].linear is not None


def test_no_aug_objective_has_no_augmented_terms(tiny_splits, tiny_teacher, student_spec):
    cfg = DistillerConfig(inter_loss=InterLossKind("MSE"), gamma1=0.5)
    student = EncoderModel(student_spec)
    st = init_state(cfg, tiny_teacher, student)
    _, parts = total_objective(cfg, Batch.of(tiny_splits["train"], np.arange(8)), tiny_teacher,
                               student, st)
    assert set(parts) == {"inter", "beta1", "gamma1"}


def test_aug_objective_reports_all_terms(tiny_splits, tiny_teacher, student_spec):
    cfg = DistillerConfig(inter_loss=InterLossKind("MI_alpha", 0.5),
                          aug=AugPolicy(("RA", "Mixup")))
    student = EncoderModel(student_spec)
    st = init_state(cfg, tiny_teacher, student, SMALL_CRITIC)
    loss, parts = total_objective(cfg, Batch.of(tiny_splits["train"], np.arange(8)), tiny_teacher,
                                  student, st, rng_stream(0, "augmentation"), {},
                                  np.full(64, 1 / 64))
    assert set(parts) == {"inter", "beta1", "gamma1", "beta2", "gamma2"}
    assert np.isfinite(loss.item())


def test_objective_gradient_reaches_student_projection_and_critic(tiny_splits, tiny_teacher,
                                                                   student_spec):
    cfg = DistillerConfig(inter_loss=InterLossKind("MI_alpha", 0.5))
    student = EncoderModel(student_spec, seed=1)
    st = init_state(cfg, tiny_teacher, student, SMALL_CRITIC)
    batch = Batch.of(tiny_splits["train"], np.arange(4))
    critic = next(iter(st.critics.values()))
    params = [student.head.weight, st.projections[0].linear.weight, critic.f_out.weight]
    fn = lambda: total_objective(cfg, batch, tiny_teacher, student, st)[0]  # noqa: E731
    assert check_gradients(fn, params) < 1e-4


@pytest.mark.parametrize("mapping", ["Skip", "Last", "EMD"])
def test_distill_runs_and_is_deterministic(tiny_splits, tiny_teacher, student_spec, mapping):
    cfg = DistillerConfig(mapping=mapping, inter_loss=InterLossKind("MSE"), epochs=1,
                          batch_size=16, learning_rate=3e-3, aug=AugPolicy(("CA",)), seed=5)
    runs = [distill(cfg, tiny_splits["train"], tiny_teacher, EncoderModel(student_spec),
                    tiny_splits["test"])[1] for _ in range(2)]
    assert runs[0].to_dict() == runs[1].to_dict()
    assert runs[0].distillation_ratio == pytest.approx(runs[0].student_score / runs[0].teacher_score)


def test_distill_does_not_mutate_initial_student(tiny_splits, tiny_teacher, student_spec):
    s0 = EncoderModel(student_spec)
    before = s0.state_dict()
    distill(DistillerConfig(epochs=1, learning_rate=1e-2), tiny_splits["train"], tiny_teacher, s0,
            critic_spec=SMALL_CRITIC)
    for k, v in s0.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_distill_rejects_incompatible_student(tiny_splits, tiny_teacher):
    deep = EncoderSpec(n_layers=3, h_units=4, h_mid=4, n_heads=2, vocab_size=64, n_classes=3)
    with pytest.raises(ValueError):
        distill(DistillerConfig(epochs=1), tiny_splits["train"], tiny_teacher, EncoderModel(deep))
    wrong = EncoderSpec(n_layers=1, h_units=4, h_mid=4, n_heads=2, vocab_size=64, n_classes=2)
    with pytest.raises(ValueError):
        distill(DistillerConfig(epochs=1), tiny_splits["train"], tiny_teacher, EncoderModel(wrong))


def test_runner_sets_trial(tiny_splits, tiny_teacher, student_spec):
    run = DistillRunner(tiny_splits["train"], tiny_splits["test"], tiny_teacher, student_spec,
                        dataset_id="tiny")
    rec = run(DistillerConfig(inter_loss=InterLossKind("none"), epochs=1, learning_rate=3e-3), 7)
    assert rec.trial == 7 and rec.dataset_id == "tiny" and rec.status == "ok"
