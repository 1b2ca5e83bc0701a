"""Command-line entry point: ``distiller <verb> [flags]``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
Every command writes its outputs atomically and leaves a ``manifest.json``
beside them.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autodistiller as ad
from .config import SearchSpace, config_from_kv
from .data import TaskSpec, load_jsonl, make_splits, read_lexicon, save_jsonl, synthetic_lexicon, write_lexicon
from .io import ConfigError, atomic_write_text, read_jsonl, read_kv, write_jsonl, write_manifest
from .mi import bench_csv, mi_bench
from .nn import EncoderModel, EncoderSpec, load_checkpoint, save_checkpoint
from .pipeline import (DistillRunner, RunRecord, baseline_score, distill, evaluate_detail,
                       train_teacher)
from .search import fanova_importance, mean_report, random_search

VERBS = ("gen-data", "train-teacher", "distill", "mi-bench", "search", "fanova", "meta-train", "recommend")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _get(kv: dict, key: str, cast, default=None):
    if key not in kv:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return cast(kv[key])
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {kv[key]!r}") from None


def _list(kv: dict, key: str) -> list[str]:
    return [s.strip() for s in _get(kv, key, str).split(",") if s.strip()]


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _dump(path: Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _dataset_meta(data_dir: Path) -> dict:
    p = data_dir / "dataset.json"
    if not p.exists():
        raise ConfigError(f"{data_dir} is not a dataset directory (no dataset.json)")
    return json.loads(p.read_text())


def _load_split(data_dir: Path, split: str):
    meta = _dataset_meta(data_dir)
    ds = load_jsonl(data_dir / f"{split}.jsonl", meta["vocab_size"], meta["n_classes"])
    ds.name = meta["name"]
    return ds


def _student_spec(kv: dict, teacher) -> EncoderSpec:
    t = teacher.spec
    h = _get(kv, "student.h_units", int, 16)
    return EncoderSpec(n_layers=_get(kv, "student.n_layers", int, 2), h_units=h,
                       h_mid=_get(kv, "student.h_mid", int, 2 * h),
                       n_heads=_get(kv, "student.n_heads", int, 2), vocab_size=t.vocab_size,
                       n_classes=t.n_classes, head_kind=t.head_kind, max_len=t.max_len)


def _distill_inputs(kv: dict):
    data_dir = Path(_get(kv, "data.dir", str))
    teacher_dir = Path(_get(kv, "teacher.dir", str))
    train = _load_split(data_dir, "train")
    held = _load_split(data_dir, _get(kv, "eval.split", str, "test"))
    teacher = load_checkpoint(teacher_dir / "teacher.json")
    lex_path = data_dir / "lexicon.tsv"
    lexicon = read_lexicon(lex_path) if lex_path.exists() else {}
    return train, held, teacher, lexicon


def _read_records(paths) -> list[RunRecord]:
    out = []
    for p in paths:
        out.extend(RunRecord.from_dict(d) for d in read_jsonl(p))
    return out


# ----------------------------------------------------------------- verbs

def cmd_gen_data(kv, args, out: Path) -> None:
    defaults = TaskSpec()
    fields = {f: type(getattr(defaults, f)) for f in defaults.__dataclass_fields__}
    spec_args = {f: _get(kv, f"task.{f}", cast, getattr(defaults, f)) for f, cast in fields.items()}
    spec_args["task_kind"] = _get(kv, "task.kind", str, defaults.task_kind)
    spec = TaskSpec(**spec_args)
    name = _get(kv, "data.name", str, "synthetic-" + ("cls" if spec.task_kind == "classification" else "tag"))
    splits = make_splits(spec, _get(kv, "data.n_train", int, 2000), _get(kv, "data.n_dev", int, 200),
                         _get(kv, "data.n_test", int, 1000), args.seed, name)
    for split, ds in splits.items():
        if len(ds):
            save_jsonl(ds, out / f"{split}.jsonl")
    write_lexicon(synthetic_lexicon(spec, args.seed), out / "lexicon.tsv")
    description = _get(kv, "data.description", str,
                       "synthetic keyword topic classification" if spec.task_kind == "classification"
                       else "synthetic markov sequence tagging")
    _dump(out / "dataset.json", {"name": name, "task_kind": spec.task_kind, "vocab_size": spec.vocab_size,
                                 "n_classes": spec.n_classes, "description": description,
                                 "splits": {k: len(v) for k, v in splits.items()}})


def cmd_train_teacher(kv, args, out: Path) -> None:
    data_dir = Path(_get(kv, "data.dir", str))
    train = _load_split(data_dir, "train")
    pool = _get(kv, "teacher.train", str, "")
    fit_on = load_jsonl(pool, train.vocab_size, train.n_classes) if pool else train
    held = _load_split(data_dir, _get(kv, "eval.split", str, "test"))
    h = _get(kv, "teacher.h_units", int, 32)
    spec = EncoderSpec(n_layers=_get(kv, "teacher.n_layers", int, 4), h_units=h,
                       h_mid=_get(kv, "teacher.h_mid", int, 2 * h), n_heads=_get(kv, "teacher.n_heads", int, 4),
                       vocab_size=train.vocab_size, n_classes=train.n_classes, head_kind=train.task_kind,
                       max_len=max(64, train.tokens.shape[1]))
    teacher = train_teacher(fit_on, spec, _get(kv, "teacher.epochs", int, 6),
                            _get(kv, "teacher.learning_rate", float, 3e-3),
                            _get(kv, "teacher.batch_size", int, 32), args.seed)
    save_checkpoint(teacher, out / "teacher.json")
    scores = evaluate_detail(teacher, held)
    base = baseline_score(train, held, args.seed, _get(kv, "baseline.epochs", int, 3))
    _dump(out / "scores.json", {"data_dir": str(data_dir), "dataset_id": train.name,
                                "teacher_score": scores["accuracy"], "teacher_metrics": scores,
                                "baseline_score": base, "n_examples": len(train)})


def cmd_distill(kv, args, out: Path) -> None:
    cfg = config_from_kv(kv, args.seed)
    train, held, teacher, lexicon = _distill_inputs(kv)
    spec = _student_spec(kv, teacher)
    student, rec = distill(cfg, train, teacher, EncoderModel(spec, seed=cfg.seed), held, lexicon, train.name)
    save_checkpoint(student, out / "student.json")
    write_jsonl(out / "records.jsonl", [rec.to_dict()])


def cmd_mi_bench(kv, args, out: Path) -> None:
    rhos = _floats(args.rho or kv.get("mi.rho", "0.8"), "--rho")
    alphas = _floats(args.alpha or kv.get("mi.alpha", "0.9"), "--alpha")
    for r in rhos:
        if not -1.0 < r < 1.0:
            raise ConfigError("--rho must lie strictly between -1 and 1")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ConfigError("--alpha must lie in [0, 1]")
    rows = mi_bench(rhos, alphas, d=_get(kv, "mi.d", int, 1), batch=_get(kv, "mi.batch", int, 128),
                    steps=_get(kv, "mi.steps", int, 400), seeds=(args.seed,))
    atomic_write_text(out / "mi_bench.csv", bench_csv(rows))


def cmd_search(kv, args, out: Path) -> None:
    base_cfg = config_from_kv(kv, args.seed)
    budget = args.budget if args.budget is not None else _get(kv, "search.budget", int, 20)
    if budget < 0:
        raise ConfigError("--budget must be >= 0")
    train, held, teacher, lexicon = _distill_inputs(kv)
    runner = DistillRunner(train, held, teacher, _student_spec(kv, teacher), lexicon, train.name)
    base = dict(epochs=base_cfg.epochs, batch_size=base_cfg.batch_size,
                learning_rate=base_cfg.learning_rate)
    recs = random_search(SearchSpace(), budget, base_cfg.seed, runner, args.workers, **base)
    write_jsonl(out / "records.jsonl", [r.to_dict() for r in recs])
    failed = sum(r.status != "ok" for r in recs)
    if failed:
        print(f"search: {failed} of {budget} trials failed", file=sys.stderr)


def cmd_fanova(kv, args, out: Path) -> None:
    paths = list(args.inputs) or _list(kv, "records")
    recs = _read_records(paths)
    by_ds: dict[str, list] = {}
    for r in recs:
        by_ds.setdefault(r.dataset_id or "unknown", []).append(r)
    min_records = _get(kv, "fanova.min_records", int, 20)
    reports = [fanova_importance(by_ds[d], ["inter_loss", "pred_loss", "mapping", "aug"], seed=args.seed,
                                 min_records=min_records, dataset_id=d) for d in sorted(by_ds)]
    mean = mean_report(reports)
    _dump(out / "importance.json", {"per_dataset": [r.to_dict() for r in reports], "mean": mean.to_dict()})
    csv_text = reports[0].to_csv().splitlines()[0] + "\n" + "".join(
        "".join(r.to_csv().splitlines(True)[1:]) for r in reports + [mean])
    atomic_write_text(out / "importance.csv", csv_text)


def _features_for(teacher_dir: Path, table, idf) -> tuple[str, ad.DatasetFeatures]:
    scores = json.loads((teacher_dir / "scores.json").read_text())
    data_dir = Path(scores["data_dir"])
    meta = _dataset_meta(data_dir)
    train = _load_split(data_dir, "train")
    corpus = [r["tokens"] for r in train.records()]
    feats = ad.featurize_dataset(corpus, meta["description"].split(), table, scores["baseline_score"],
                                 scores["teacher_score"], idf)
    return scores["dataset_id"], feats


def _corpus_of(teacher_dir: Path):
    scores = json.loads((teacher_dir / "scores.json").read_text())
    return [r["tokens"] for r in _load_split(Path(scores["data_dir"]), "train").records()]


def _table(kv):
    path = kv.get("embeddings")
    return ad.read_embeddings(path) if path else ad.default_embeddings()


def cmd_meta_train(kv, args, out: Path) -> None:
    teacher_dirs = [Path(p) for p in _list(kv, "teachers")]
    table = _table(kv)
    idf = ad.build_idf([_corpus_of(t) for t in teacher_dirs])
    feats = dict(_features_for(t, table, idf) for t in teacher_dirs)
    rows = []
    for r in _read_records(list(args.inputs) or _list(kv, "records")):
        if r.status != "ok" or not np.isfinite(r.distillation_ratio):
            continue
        if r.dataset_id not in feats:
            raise ConfigError(f"no teacher directory registered for dataset {r.dataset_id!r}")
        rows.append(ad.MetaRow(r.dataset_id, feats[r.dataset_id], r.config, r.distillation_ratio))
    settings = ad.GBRTSettings(n_rounds=_get(kv, "meta.rounds", int, 200),
                               max_depth=_get(kv, "meta.depth", int, 3),
                               shrinkage=_get(kv, "meta.shrinkage", float, 0.1),
                               subsample=_get(kv, "meta.subsample", float, 0.8))
    write_jsonl(out / "meta.jsonl", [r.to_dict() for r in rows])
    model = ad.train_meta(rows, settings, args.seed)
    _dump(out / "meta_model.json", ad.meta_to_dict(model, idf))
    if len({r.dataset_id for r in rows}) >= 2:
        _dump(out / "lodo.json", ad.lodo_eval(rows, settings, args.seed).to_dict())


def cmd_recommend(kv, args, out: Path) -> None:
    model, idf = ad.meta_from_dict(json.loads(Path(_get(kv, "model", str)).read_text()))
    if idf is None:
        raise ConfigError("model file carries no IDF table; retrain it with meta-train")
    _, feats = _features_for(Path(_get(kv, "teacher.dir", str)), _table(kv), idf)
    top_n = args.top_n if args.top_n is not None else _get(kv, "top_n", int, 5)
    if top_n < 1:
        raise ConfigError("--top-n must be >= 1")
    recs = ad.recommend(model, feats, SearchSpace(), top_n)
    write_jsonl(out / "recommendations.jsonl",
                [{"rank": k + 1, "predicted_ratio": round(p, 10), "axes": c.axes(), "config": c.to_dict()}
                 for k, (c, p) in enumerate(recs)])


COMMANDS = {"gen-data": cmd_gen_data, "train-teacher": cmd_train_teacher, "distill": cmd_distill,
            "mi-bench": cmd_mi_bench, "search": cmd_search, "fanova": cmd_fanova,
            "meta-train": cmd_meta_train, "recommend": cmd_recommend}


# ------------------------------------------------------------------ entry

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="distiller", description="Knowledge distillation toolkit.")
    p.add_argument("verb", choices=VERBS, help="command to run")
    p.add_argument("inputs", nargs="*", help="input record files (fanova, meta-train)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="parallel search trials")
    p.add_argument("--budget", type=int, help="number of search trials")
    p.add_argument("--alpha", help="MI-alpha value(s), comma separated")
    p.add_argument("--rho", help="Gaussian correlation(s), comma separated")
    p.add_argument("--top-n", dest="top_n", type=int, help="number of recommendations")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        kv = read_kv(args.config) if args.config else {}
    except (UsageError, ConfigError) as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.verb](kv, args, out)
        run_kv = dict(kv)
        for flag in ("budget", "alpha", "rho", "top_n"):
            if getattr(args, flag) is not None:
                run_kv[f"--{flag}"] = str(getattr(args, flag))
        write_manifest(out, args.verb, run_kv, args.seed)
    except ConfigError as exc:
        print(f"distiller {args.verb}: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"distiller {args.verb}: missing input: {exc.filename}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit code 1
        print(f"distiller {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
