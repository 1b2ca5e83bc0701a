"""Search a few pipelines on three small tasks, rank the design axes and recommend.

Collects run records with random search, decomposes their variance with
fANOVA, and trains the meta-regressor that recommends configurations for a
dataset it has not seen. Takes about a minute.
"""
from distiller import autodistiller as ad
from distiller.config import SearchSpace
from distiller.data import TaskSpec, make_splits, synthetic_lexicon
from distiller.nn import EncoderSpec
from distiller.pipeline import DistillRunner, baseline_score, evaluate, train_teacher
from distiller.search import fanova_importance, random_search

tasks = {"keywords": TaskSpec(seq_len=10),
         "negation": TaskSpec(seq_len=10, keyword_rate=0.35, confuser_rate=0.08, negation_rate=0.5),
         "noisy": TaskSpec(seq_len=10, keyword_rate=0.15, confuser_rate=0.2)}
splits = {n: make_splits(s, 150, 0, 150, seed=k, name=n) for k, (n, s) in enumerate(tasks.items())}
corpora = {n: [r["tokens"] for r in sp["train"].records()] for n, sp in splits.items()}
idf = ad.build_idf(list(corpora.values()))
table = ad.default_embeddings()
student = EncoderSpec(n_layers=1, h_units=8, h_mid=16, n_heads=2, vocab_size=64, n_classes=3)

rows, feats = [], {}
for k, (name, sp) in enumerate(splits.items()):
    teacher = train_teacher(sp["train"], EncoderSpec(n_layers=2, h_units=16, h_mid=32, n_heads=2,
                                                     vocab_size=64, n_classes=3), epochs=4, seed=k)
    feats[name] = ad.featurize_dataset(corpora[name], ["synthetic", "topic", "classification"], table,
                                       baseline_score(sp["train"], sp["test"], k, epochs=2),
                                       evaluate(teacher, sp["test"]), idf)
    runner = DistillRunner(sp["train"], sp["test"], teacher, student,
                           synthetic_lexicon(tasks[name], k), name)
    records = random_search(SearchSpace(), 24, 100 * k, runner, epochs=2, batch_size=16,
                            learning_rate=3e-3)
    rep = fanova_importance(records, ["inter_loss", "pred_loss", "mapping", "aug"], dataset_id=name)
    ranked = sorted(rep.individual.items(), key=lambda kv: -kv[1])
    print(f"{name}: teacher {feats[name].teacher_score:.3f}; axis importance "
          + ", ".join(f"{a} {v:.2f}" for a, v in ranked))
    rows += [ad.MetaRow(name, feats[name], r.config, r.distillation_ratio) for r in records]

lodo = ad.lodo_eval(rows, ad.GBRTSettings(n_rounds=50))
print("leave-one-dataset-out Spearman:", {k: None if v is None else round(v, 2)
                                          for k, v in lodo.per_dataset.items()})
model = ad.train_meta([r for r in rows if r.dataset_id != "noisy"], ad.GBRTSettings(n_rounds=50))
print("top pipelines suggested for the held-out 'noisy' task:")
for cfg, pred in ad.recommend(model, feats["noisy"], SearchSpace(), 3):
    print(f"  predicted ratio {pred:.3f}  {cfg.axes()}")
