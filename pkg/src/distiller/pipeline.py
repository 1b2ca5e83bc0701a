"""The distillation loop: combined objective, teacher fine-tuning, evaluation, run records."""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .augment import MixPlan, augment_tokens
from .autograd import Tensor
from .config import DistillerConfig
from .data import Dataset, unigram_table
from .losses import Projection, inter_loss, kd_pred_loss, pred_loss
from .mapping import MappingMatrix, build_mapping, emd_loss
from .mi import CriticPair, CriticSpec
from .nn import Adam, EncoderModel, EncoderSpec, rng_stream


def distillation_ratio(student_score: float, teacher_score: float) -> float:
    """Fraction of the teacher's score reached by the student."""
    if teacher_score <= 0:
        raise ValueError("teacher score must be positive")
    return student_score / teacher_score


@dataclass
class RunRecord:
    config: DistillerConfig
    dataset_id: str
    task_kind: str
    teacher_score: float
    student_score: float
    distillation_ratio: float
    seed: int
    wall_time: float = 0.0
    status: str = "ok"
    error: str | None = None
    trial: int | None = None
    history: list = field(default_factory=list)

    def to_dict(self, include_time: bool = False) -> dict:
        d = {
            "config": self.config.to_dict() if self.config is not None else None,
            "dataset_id": self.dataset_id, "task_kind": self.task_kind,
            "teacher_score": self.teacher_score, "student_score": self.student_score,
            "distillation_ratio": self.distillation_ratio, "seed": self.seed,
            "status": self.status, "error": self.error, "trial": self.trial,
            "history": [round(h, 10) for h in self.history],
        }
        if include_time:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        cfg = DistillerConfig.from_dict(d["config"]) if d.get("config") else None
        return cls(cfg, d["dataset_id"], d["task_kind"], d["teacher_score"], d["student_score"],
                   d["distillation_ratio"], d["seed"], d.get("wall_time", 0.0),
                   d.get("status", "ok"), d.get("error"), d.get("trial"), d.get("history", []))


# -------------------------------------------------------------- evaluation

def predict(model: EncoderModel, ds: Dataset, batch_size: int = 256) -> np.ndarray:
    out = []
    for idx in ds.batches(batch_size):
        logits, _ = model.forward(ds.tokens[idx], ds.mask[idx])
        out.append(logits.data.argmax(axis=-1))
    return np.concatenate(out)


def _spans(tags: np.ndarray) -> set:
    # maximal runs of one nonzero tag; tag 0 is the outside label
    spans, start = set(), None
    for t in range(len(tags) + 1):
        cur = tags[t] if t < len(tags) else 0
        if start is not None and (cur != tags[start]):
            spans.add((start, t, int(tags[start])))
            start = None
        if start is None and cur != 0 and t < len(tags):
            start = t
    return spans


def span_f1(pred: np.ndarray, gold: np.ndarray, mask: np.ndarray) -> float:
    tp = n_pred = n_gold = 0
    for p, g, m in zip(pred, gold, mask):
        n = int(m.sum())
        ps, gs = _spans(p[:n]), _spans(g[:n])
        tp += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    if n_pred == 0 and n_gold == 0:
        return 1.0
    prec = tp / n_pred if n_pred else 0.0
    rec = tp / n_gold if n_gold else 0.0
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def evaluate_detail(model: EncoderModel, ds: Dataset) -> dict:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty split")
    pred = predict(model, ds)
    if ds.task_kind == "tagging":
        acc = float((pred == ds.labels)[ds.mask].mean())
        return {"accuracy": acc, "span_f1": span_f1(pred, ds.labels, ds.mask)}
    return {"accuracy": float((pred == ds.labels).mean())}


def evaluate(model: EncoderModel, ds: Dataset, task_kind: str | None = None,
             metric: str = "accuracy") -> float:
    """Accuracy (per token for tagging); ``metric='span_f1'`` for tagging spans."""
    if task_kind is not None and task_kind != ds.task_kind:
        raise ValueError(f"split is {ds.task_kind}, not {task_kind}")
    return evaluate_detail(model, ds)[metric]


# --------------------------------------------------------- teacher training

def train_supervised(model: EncoderModel, train: Dataset, epochs: int, lr: float = 3e-3,
                     batch_size: int = 32, seed: int = 0) -> list[float]:
    """Plain cross-entropy fine-tuning on hard labels; returns per-epoch mean loss."""
    opt = Adam(model.parameters(), lr=lr)
    order_rng = rng_stream(seed, "data-order")
    history = []
    for _ in range(epochs):
        losses = []
        for idx in train.batches(batch_size, order_rng):
            mask = train.mask[idx]
            logits, _ = model.forward(train.tokens[idx], mask)
            loss = pred_loss("CE", logits, train.labels[idx],
                             mask if train.task_kind == "tagging" else None)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return history


def train_teacher(train: Dataset, spec: EncoderSpec | None = None, epochs: int = 8,
                  lr: float = 3e-3, batch_size: int = 32, seed: int = 0) -> EncoderModel:
    spec = spec or EncoderSpec(n_layers=4, h_units=32, h_mid=64, n_heads=4,
                               vocab_size=train.vocab_size, n_classes=train.n_classes,
                               head_kind=train.task_kind,
                               max_len=max(64, train.tokens.shape[1]))
    model = EncoderModel(spec, seed=seed)
    train_supervised(model, train, epochs, lr, batch_size, seed)
    return model


# ------------------------------------------------------------- the objective

@dataclass
class DistillState:
    """Everything trained alongside the student: projections and MI critics."""
    mapping: MappingMatrix | None
    projections: list
    critics: dict

    def parameters(self) -> list[Tensor]:
        ps = [p for proj in self.projections for p in proj.parameters()]
        for key in sorted(self.critics):
            ps.extend(self.critics[key].parameters())
        return ps


def init_state(config: DistillerConfig, teacher: EncoderModel, student: EncoderModel,
               critic_spec: CriticSpec = CriticSpec()) -> DistillState:
    m, n = teacher.n_layers, student.n_layers
    ht, hs = teacher.spec.h_units, student.spec.h_units
    mapping = None if config.mapping == "EMD" else build_mapping(config.mapping, m, n)
    projections = [Projection(hs, ht, seed=config.seed, index=j) for j in range(n)]
    critics = {}
    if config.inter_loss.kind == "MI_alpha":
        pairs = ([(i, j) for i in range(m) for j in range(n)] if mapping is None
                 else [(t - 1, s - 1) for t, s in mapping.pairs()])
        for i, j in pairs:
            critics[(i, j)] = CriticPair(ht, ht, critic_spec, seed=config.seed * 1009 + i * 31 + j)
    return DistillState(mapping, projections, critics)


@dataclass
class Batch:
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    task_kind: str
    n_classes: int

    @classmethod
    def of(cls, ds: Dataset, idx) -> "Batch":
        return cls(ds.tokens[idx], ds.mask[idx], ds.labels[idx], ds.task_kind, ds.n_classes)

    @property
    def row_mask(self):
        return self.mask if self.task_kind == "tagging" else None


def _detached(states):
    return [Tensor(s.data) for s in states]


def _intermediate(config, state: DistillState, hs, ht, mask) -> Tensor:
    kind = config.inter_loss
    if kind.kind == "none":
        return Tensor(0.0)
    if state.mapping is None:
        loss, _ = emd_loss(hs, ht, kind, state.projections, state.critics or None, mask)
        return loss
    total = None
    w = state.mapping.weights
    for i, j in zip(*np.nonzero(w)):
        term = inter_loss(kind, hs[j], ht[i], state.projections[j],
                          state.critics.get((int(i), int(j))), mask) * w[i, j]
        total = term if total is None else total + term
    return total


def total_objective(config: DistillerConfig, batch: Batch, teacher: EncoderModel,
                    student: EncoderModel, state: DistillState, rng: np.random.Generator | None = None,
                    lexicon: dict | None = None, unigram: np.ndarray | None = None,
                    teacher_cache: tuple | None = None) -> tuple[Tensor, dict]:
    """Intermediate term on augmented inputs plus the four weighted prediction terms.

    Without augmentation the augmented input is the original batch and the
    ``beta2``/``gamma2`` terms carry zero weight. Returns the loss and each
    unweighted term.
    """
    rm = batch.row_mask
    parts: dict[str, float] = {}
    one_hot = np.eye(batch.n_classes)[batch.labels]

    # original inputs
    s_logits, s_states = student.forward(batch.tokens, batch.mask)
    if teacher_cache is not None:
        t_logits, t_states = teacher_cache
    else:
        t_logits, t_states = teacher.forward(batch.tokens, batch.mask)
        t_logits, t_states = Tensor(t_logits.data), _detached(t_states)

    if config.aug.ops:
        if rng is None:
            raise ValueError("augmentation needs an rng")
        tok_hat, lab_hat = augment_tokens(config.aug, batch.tokens, batch.mask, batch.labels,
                                          lexicon or {}, unigram, rng)
        y_hat = np.eye(batch.n_classes)[lab_hat]
        mask_hat = batch.mask
        s_emb, t_emb = student.embed(tok_hat), Tensor(teacher.embed(tok_hat).data)
        if config.aug.uses_mixup:
            plan = MixPlan.draw(config.aug, len(tok_hat), rng)
            s_emb, t_emb = plan.mix_embeddings(s_emb), plan.mix_embeddings(t_emb)
            y_hat = plan.mix_targets(y_hat)
            mask_hat = plan.mix_mask(batch.mask)
        sh_logits, sh_states = student.forward_embedded(s_emb, mask_hat)
        th_logits, th_states = teacher.forward_embedded(t_emb, mask_hat)
        th_logits, th_states = Tensor(th_logits.data), _detached(th_states)
        rm_hat = mask_hat if batch.task_kind == "tagging" else None
    else:
        sh_states, th_states, mask_hat = s_states, t_states, batch.mask

    inter = _intermediate(config, state, sh_states, th_states, mask_hat)
    parts["inter"] = inter.item()
    loss = inter
    if config.beta1:
        term = kd_pred_loss(config.pred_loss, s_logits, t_logits, rm)
        parts["beta1"] = term.item()
        loss = loss + config.beta1 * term
    if config.gamma1:
        term = pred_loss(config.pred_loss, s_logits, one_hot, rm)
        parts["gamma1"] = term.item()
        loss = loss + config.gamma1 * term
    if config.aug.ops and config.beta2:
        term = kd_pred_loss(config.pred_loss, sh_logits, th_logits, rm_hat)
        parts["beta2"] = term.item()
        loss = loss + config.beta2 * term
    if config.aug.ops and config.gamma2:
        term = pred_loss(config.pred_loss, sh_logits, y_hat, rm_hat)
        parts["gamma2"] = term.item()
        loss = loss + config.gamma2 * term
    return loss, parts


def _teacher_cache(teacher: EncoderModel, ds: Dataset, batch_size: int = 256):
    logits, states = [], []
    for idx in ds.batches(batch_size):
        lg, st = teacher.forward(ds.tokens[idx], ds.mask[idx])
        logits.append(lg.data)
        states.append([s.data for s in st])
    return (np.concatenate(logits),
            [np.concatenate([s[k] for s in states]) for k in range(teacher.n_layers)])


def distill(config: DistillerConfig, train: Dataset, teacher: EncoderModel,
            student_init: EncoderModel, eval_data: Dataset | None = None,
            lexicon: dict | None = None, dataset_id: str | None = None,
            critic_spec: CriticSpec = CriticSpec()) -> tuple[EncoderModel, RunRecord]:
    """Train a copy of ``student_init`` against ``teacher`` under ``config``.

    Student, projections and critics are optimised jointly with one Adam.
    Scores come from ``eval_data`` (the training split when omitted).
    """
    start = time.perf_counter()
    if student_init.spec.vocab_size != teacher.spec.vocab_size:
        raise ValueError("student and teacher vocabularies differ")
    if student_init.spec.n_classes != train.n_classes or student_init.spec.head_kind != train.task_kind:
        raise ValueError("student head does not fit the dataset")
    if student_init.n_layers > teacher.n_layers:
        raise ValueError("student has more layers than the teacher")
    student = copy.deepcopy(student_init)
    state = init_state(config, teacher, student, critic_spec)
    opt = Adam(student.parameters() + state.parameters(), lr=config.learning_rate)
    order_rng = rng_stream(config.seed, "data-order")
    aug_rng = rng_stream(config.seed, "augmentation")
    unigram = unigram_table(train) if config.aug.ops else None
    cache = _teacher_cache(teacher, train)
    history = []
    for _ in range(config.epochs):
        losses = []
        for idx in train.batches(config.batch_size, order_rng):
            if config.inter_loss.kind == "MI_alpha" and len(idx) < 2:
                continue
            tc = (Tensor(cache[0][idx]), [Tensor(s[idx]) for s in cache[1]])
            loss, _ = total_objective(config, Batch.of(train, idx), teacher, student, state,
                                      aug_rng, lexicon, unigram, teacher_cache=tc)
            if not np.isfinite(loss.item()):
                raise ag.NumericError("distillation loss became non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)) if losses else float("nan"))
    held = eval_data if eval_data is not None else train
    t_score = evaluate(teacher, held)
    s_score = evaluate(student, held)
    ratio = distillation_ratio(s_score, t_score) if t_score > 0 else float("nan")
    rec = RunRecord(config, dataset_id or train.name, train.task_kind, t_score, s_score, ratio,
                    config.seed, time.perf_counter() - start, history=history)
    return student, rec


def baseline_score(train: Dataset, eval_data: Dataset, seed: int = 0, epochs: int = 3,
                   lr: float = 3e-3) -> float:
    """Score of a weak reference model: a one-layer encoder fit with plain cross-entropy."""
    spec = EncoderSpec(n_layers=1, h_units=16, h_mid=32, n_heads=2, vocab_size=train.vocab_size,
                       n_classes=train.n_classes, head_kind=train.task_kind,
                       max_len=max(64, train.tokens.shape[1]))
    model = EncoderModel(spec, seed=seed)
    train_supervised(model, train, epochs, lr, 32, seed)
    return evaluate(model, eval_data)


@dataclass
class DistillRunner:
    """Search trial: fresh student from ``student_spec`` seeded by the config, then ``distill``."""
    train: Dataset
    eval_data: Dataset
    teacher: EncoderModel
    student_spec: EncoderSpec
    lexicon: dict | None = None
    dataset_id: str | None = None

    def __call__(self, config: DistillerConfig, trial: int = 0) -> RunRecord:
        student = EncoderModel(self.student_spec, seed=config.seed)
        _, rec = distill(config, self.train, self.teacher, student, self.eval_data, self.lexicon,
                         self.dataset_id)
        rec.trial = trial
        return rec
