"""Command-line pipeline: gen | ingest | vocab | train | infer | nearest |
eval | project | trajectory.

Every subcommand reads one run config (TOML-style file plus flag overrides;
flags win) whose fingerprint is embedded in each artifact it writes and
verified on each fingerprinted artifact it reads. Exit codes: 0 success,
2 usage, 3 missing input, 4 format/data, 5 config, 6 fingerprint mismatch,
1 internal.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import config as cfgmod
from . import corpus, evalkit, inference, projector, synthgen, trainer
from .errors import (
    ConfigError,
    DataError,
    FingerprintError,
    MissingInputError,
    SeqvecError,
)

EXIT_CODES_DOC = (
    "exit codes: 0 ok, 2 usage, 3 missing-input, 4 format, 5 config, "
    "6 fingerprint, 1 internal"
)


def _check_fingerprint(expected: str, found: str | None, what: str) -> None:
    if found is not None and found != expected:
        raise FingerprintError(
            f"{what} was produced under fingerprint {found[:12]}..., "
            f"current config is {expected[:12]}..."
        )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_events(cfg, fp: str, path=None):
    path = path or cfg["paths"]["events"]
    records = corpus.ingest(path, cfg["global"]["seed"])
    _check_fingerprint(fp, corpus.read_fingerprint(path), f"event log {path}")
    return records


def _load_labels(cfg, fp: str, path=None):
    path = path or cfg["paths"]["labels"]
    try:
        labels, event_day = synthgen.read_labels_tsv(path)
    except FileNotFoundError:
        raise MissingInputError(f"labels file not found: {path}") from None
    _check_fingerprint(fp, corpus.read_fingerprint(path), f"labels file {path}")
    return labels, event_day


def _load_model(cfg, fp: str, path=None):
    path = path or cfg["paths"]["model"]
    try:
        model = trainer.load(path)
    except FileNotFoundError:
        raise MissingInputError(f"model container not found: {path}") from None
    sidecar = trainer.load_sidecar(path)
    if sidecar is not None:
        _check_fingerprint(fp, sidecar.get("fingerprint"), f"model {path}")
    return model, sidecar


def _build_programs(cfg):
    g = cfg["gen"]
    return synthgen.default_programs(
        n_families=g["n_families"], n_sub=g["n_sub"], n_leaf=g["n_leaf"],
        background_rate=g["background_rate"], target_rate=g["target_rate"],
        onset_range=(g["onset_lo"], g["onset_hi"]),
        marker_weight=g["marker_weight"],
        marker_deferral_days=g["marker_deferral_days"],
        background_blend=g["background_blend"],
        family_overlap=g["family_overlap"],
    )


def _train_config(cfg) -> trainer.TrainConfig:
    t = cfg["train"]
    return trainer.TrainConfig(
        mode=t["mode"], objective=t["objective"], k=t["k"], window=t["window"],
        epochs=t["epochs"], initial_alpha=t["initial_alpha"],
        final_alpha=t["final_alpha"], num_negatives=t["num_negatives"],
        workers=t["workers"], seed=cfg["global"]["seed"],
        min_count=cfg["vocab"]["min_count"],
        dbow_train_words=t["dbow_train_words"],
    )


# --- subcommand handlers ----------------------------------------------------


def cmd_gen(cfg, fp, args):
    g = cfg["gen"]
    programs, target = _build_programs(cfg)
    cohort = synthgen.generate(
        programs, g["n_records"], g["history_days"], target,
        cfg["global"]["seed"], positive_fraction=g["positive_fraction"],
        min_span_days=g["min_span_days"],
        min_post_onset_days=g["min_post_onset_days"],
    )
    events_path = args.events or cfg["paths"]["events"]
    labels_path = args.labels or cfg["paths"]["labels"]
    corpus.write_events_tsv(cohort.records, events_path, fingerprint=fp)
    synthgen.write_labels_tsv(cohort, labels_path, fingerprint=fp)
    n_events = sum(len(r) for r in cohort.records)
    _emit({"records": len(cohort.records), "events": n_events,
           "positives": sum(cohort.labels.values()),
           "events_path": str(events_path), "labels_path": str(labels_path),
           "fingerprint": fp})
    return 0


def cmd_ingest(cfg, fp, args):
    records = _load_events(cfg, fp, args.events)
    if args.out:
        corpus.write_events_tsv(records, args.out, fingerprint=fp)
    _emit({"records": len(records), "events": sum(len(r) for r in records),
           "fingerprint": fp})
    return 0


def cmd_vocab(cfg, fp, args):
    records = _load_events(cfg, fp, args.events)
    vocab = corpus.build_vocab(records, cfg["vocab"]["min_count"],
                               cfg["vocab"]["group_depth"])
    out = args.out or cfg["paths"]["vocab"]
    corpus.write_vocab_tsv(vocab, out, fingerprint=fp)
    _emit({"tokens": len(vocab), "groups": len(vocab.groups),
           "total_events": vocab.total_events, "vocab_path": str(out),
           "fingerprint": fp})
    return 0


def cmd_train(cfg, fp, args):
    records = _load_events(cfg, fp, args.events)
    vocab = corpus.build_vocab(records, cfg["vocab"]["min_count"],
                               cfg["vocab"]["group_depth"])
    tcfg = _train_config(cfg)
    progress_fh = open(args.progress_log, "w", encoding="utf-8") if args.progress_log else None

    def progress(entry):
        if progress_fh:
            progress_fh.write(json.dumps(entry, sort_keys=True) + "\n")

    try:
        model = trainer.train(records, vocab, tcfg, progress=progress)
    finally:
        if progress_fh:
            progress_fh.close()
    model_path = args.model or cfg["paths"]["model"]
    trainer.save(model, model_path)
    trainer.save_sidecar(model_path, {
        "fingerprint": fp,
        "record_ids": [r.record_id for r in records],
        "vocab_fingerprint": model.vocab_fingerprint(),
        "num_negatives": tcfg.num_negatives,
        "initial_alpha": tcfg.initial_alpha,
        "final_alpha": tcfg.final_alpha,
        "group_depth": cfg["vocab"]["group_depth"],
    })
    _emit({"model_path": str(model_path), "docs": model.num_docs,
           "vocab_size": len(vocab), "epochs": model.epochs, "fingerprint": fp})
    return 0


def cmd_infer(cfg, fp, args):
    model, sidecar = _load_model(cfg, fp, args.model)
    records = _load_events(cfg, fp, args.events)
    if args.records:
        wanted = set(args.records.split(","))
        records = [r for r in records if r.record_id in wanted]
        missing = wanted - {r.record_id for r in records}
        if missing:
            raise DataError(f"records not in the event log: {sorted(missing)}")
    ids, rows = [], []
    for rec in records:
        encoded = corpus.encode(rec, model.vocab)
        if len(encoded) == 0:
            continue
        vec = inference.infer(
            model, encoded, cfg["infer"]["epochs"],
            (cfg["train"]["initial_alpha"], cfg["train"]["final_alpha"]),
            seed=cfg["global"]["seed"],
            num_negatives=cfg["train"]["num_negatives"],
        )
        ids.append(rec.record_id)
        rows.append(vec.vector)
    out = args.out or cfg["paths"]["vectors"]
    inference.write_vectors_tsv(ids, np.asarray(rows), out, fingerprint=fp)
    _emit({"inferred": len(ids), "skipped": len(records) - len(ids),
           "vectors_path": str(out), "fingerprint": fp})
    return 0


def cmd_nearest(cfg, fp, args):
    model, sidecar = _load_model(cfg, fp, args.model)
    ids = sidecar.get("record_ids") if sidecar else None
    if ids is not None and len(ids) != model.num_docs:
        ids = None
    if args.record:
        if ids is None or args.record not in ids:
            raise DataError(f"record {args.record!r} is not a trained document")
        query = model.doc_vectors[ids.index(args.record)]
    elif args.query:
        query = np.asarray([float(x) for x in args.query.split(",")], dtype=np.float32)
        if query.shape[0] != model.k:
            raise DataError(f"query has {query.shape[0]} dims, model expects {model.k}")
    else:
        raise ConfigError("nearest needs --record or --query")
    for rid, cos in inference.nearest_docs(model, query, args.n, ids):
        print(f"{rid}\t{cos!r}")
    return 0


def cmd_eval(cfg, fp, args):
    records = _load_events(cfg, fp, args.events)
    labels, event_day = _load_labels(cfg, fp, args.labels)
    model, sidecar = _load_model(cfg, fp, args.model)
    vocab = corpus.build_vocab(records, cfg["vocab"]["min_count"],
                               cfg["vocab"]["group_depth"])
    e = cfg["eval"]
    task = evalkit.task_preset(e["task"], e["horizon"],
                               min_dx_events=e["min_dx_events"],
                               min_history_days=e["min_history_days"])
    options = evalkit.EvalOptions(
        vocab=vocab, seed=cfg["global"]["seed"],
        infer_epochs=cfg["infer"]["epochs"],
        infer_alpha=(cfg["train"]["initial_alpha"], cfg["train"]["final_alpha"]),
        num_negatives=cfg["train"]["num_negatives"], folds=e["folds"],
        lambdas=tuple(e["lambdas"]), alphas=tuple(e["alphas"]),
        n_bins=e["n_bins"], fingerprint=fp,
    )
    result = evalkit.run_task(records, labels, event_day, task, model, options)
    report_path = args.out or cfg["paths"]["report"]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(result.report_json())
    export_dir = args.export_dir or cfg["paths"]["export_dir"]
    if export_dir:
        import os

        os.makedirs(export_dir, exist_ok=True)
        ids = [inst.record_id for inst in result.instances]
        evalkit.write_sparse_tsv(result.bow_X, os.path.join(export_dir, "bow.tsv"),
                                 fingerprint=fp)
        with open(os.path.join(export_dir, "bow_columns.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write(f"# seqvec-fingerprint: {fp}\n")
            for i, name in enumerate(result.bow_names):
                fh.write(f"{i}\t{name}\n")
        evalkit.write_dense_tsv(ids, result.emb_X,
                                os.path.join(export_dir, "embedded.tsv"),
                                fingerprint=fp)
        with open(os.path.join(export_dir, "instances.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write(f"# seqvec-fingerprint: {fp}\n")
            for i, inst in enumerate(result.instances):
                fh.write(f"{i}\t{inst.record_id}\t{inst.label}\t{inst.cutoff_day}\n")
    _emit({"report_path": str(report_path),
           "auc_embedded": result.report["representations"]["embedded"]["auc_test"],
           "auc_bow": result.report["representations"]["bow"]["auc_test"],
           "fingerprint": fp})
    return 0


def cmd_project(cfg, fp, args):
    if args.vectors:
        ids, mat = inference.read_vectors_tsv(args.vectors)
        _check_fingerprint(fp, corpus.read_fingerprint(args.vectors),
                           f"vectors {args.vectors}")
    else:
        model, sidecar = _load_model(cfg, fp, args.model)
        mat = model.doc_vectors
        ids = sidecar.get("record_ids") if sidecar else None
        if ids is None or len(ids) != model.num_docs:
            ids = [str(i) for i in range(model.num_docs)]
    proj = projector.fit_pca2(mat)
    params_path = args.params_out or cfg["paths"]["projection"]
    projector.save_projection(proj, params_path, fingerprint=fp)
    if args.out:
        xy = proj.project(mat)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"# seqvec-fingerprint: {fp}\n")
            fh.write("record_id\tpc1\tpc2\n")
            for rid, row in zip(ids, xy):
                fh.write(f"{rid}\t{row[0]!r}\t{row[1]!r}\n")
    _emit({"explained": [float(x) for x in proj.explained],
           "projection_path": str(params_path), "fingerprint": fp})
    return 0


def cmd_trajectory(cfg, fp, args):
    model, sidecar = _load_model(cfg, fp, args.model)
    records = _load_events(cfg, fp, args.events)
    matches = [r for r in records if r.record_id == args.record]
    if not matches:
        raise DataError(f"record {args.record!r} not found in the event log")
    record = matches[0]
    proj = projector.load_projection(args.projection)
    event_day = None
    if args.labels:
        labels, event_days = _load_labels(cfg, fp, args.labels)
        event_day = event_days.get(args.record)
    if args.checkpoints:
        checkpoints = [int(x) for x in args.checkpoints.split(",")]
    else:
        step = cfg["trajectory"]["checkpoint_step"]
        checkpoints = list(range(step, record.last_day() + step + 1, step))
    points = projector.trajectory(
        model, record, checkpoints, proj, model.vocab, event_day=event_day,
        infer_epochs=cfg["infer"]["epochs"],
        alpha_schedule=(cfg["train"]["initial_alpha"], cfg["train"]["final_alpha"]),
        seed=cfg["global"]["seed"],
        num_negatives=cfg["train"]["num_negatives"],
    )
    projector.write_trajectory_tsv(points, args.out, fingerprint=fp)
    _emit({"points": len(points), "trajectory_path": str(args.out),
           "fingerprint": fp})
    return 0


# --- argument wiring ---------------------------------------------------------


FORMAT_NOTES = {
    "events": "event log TSV: record_id<TAB>day<TAB>channel<TAB>code "
              "(channel in diagnosis|lab|medication matching the dx:|lab:|med: "
              "code prefix); '#'-prefixed comment lines carry the config "
              "fingerprint and are skipped",
    "labels": "labels TSV: record_id<TAB>positive|negative<TAB>onset_day "
              "(-1 for negatives)",
    "vocab": "vocabulary TSV: code<TAB>count<TAB>group",
    "model": "model container: magic 'SQV1', u16 version, header (u8 mode, "
             "u8 objective, u32 k, u64 V, u64 D, u32 window, u32 epochs, "
             "u64 seed; little-endian), V x (u32 len + UTF-8 code + u64 count), "
             "then doc/token/output matrices row-major little-endian float32",
    "vectors": "vectors TSV: record_id followed by k reals",
    "report": "EvalReport JSON: per-representation AUC + calibration bins, "
              "split manifests, matching balance, config fingerprint",
    "trajectory": "trajectory TSV: day<TAB>pc1<TAB>pc2<TAB>marker",
    "projection": "projection JSON: mean, two orthonormal components, "
                  "explained-variance fractions",
}


def _epilog(*names):
    return "formats: " + "; ".join(FORMAT_NOTES[n] for n in names)


def _add_common(p):
    p.add_argument("--config", help="TOML-style run config file")
    p.add_argument("--seed", type=int, help="override [global].seed")


_TRAIN_FLAGS = (
    ("--mode", str, "mode"), ("--objective", str, "objective"),
    ("--k", int, "k"), ("--window", int, "window"),
    ("--epochs", int, "epochs"), ("--workers", int, "workers"),
    ("--num-negatives", int, "num_negatives"),
    ("--initial-alpha", float, "initial_alpha"),
    ("--final-alpha", float, "final_alpha"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqvec",
        description="Record-level embeddings over time-stamped categorical "
                    "event logs, with a synthetic evaluation pipeline.",
        epilog=EXIT_CODES_DOC,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labeled corpus",
                       epilog=_epilog("events", "labels"))
    _add_common(p)
    p.add_argument("--events", help="output event TSV (default [paths].events)")
    p.add_argument("--labels", help="output labels TSV (default [paths].labels)")
    p.add_argument("--n-records", type=int, dest="n_records")
    p.add_argument("--target-rate", type=float, dest="target_rate")
    p.add_argument("--positive-fraction", type=float, dest="positive_fraction")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("ingest", help="parse, order, and optionally rewrite an event log",
                       epilog=_epilog("events"))
    _add_common(p)
    p.add_argument("--events")
    p.add_argument("--out", help="write the ordered event log here")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("vocab", help="build and export the vocabulary",
                       epilog=_epilog("events", "vocab"))
    _add_common(p)
    p.add_argument("--events")
    p.add_argument("--out")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--group-depth", type=int, dest="group_depth")
    p.set_defaults(handler=cmd_vocab)

    p = sub.add_parser("train", help="train an embedding model",
                       epilog=_epilog("events", "model"))
    _add_common(p)
    p.add_argument("--events")
    p.add_argument("--model", help="output model container")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--progress-log", help="write per-epoch JSON lines here")
    for flag, typ, _ in _TRAIN_FLAGS:
        p.add_argument(flag, type=typ, dest=flag.lstrip("-").replace("-", "_"))
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="embed records with a trained model",
                       epilog=_epilog("events", "model", "vectors"))
    _add_common(p)
    p.add_argument("--events")
    p.add_argument("--model")
    p.add_argument("--records", help="comma-separated record ids (default: all)")
    p.add_argument("--infer-epochs", type=int, dest="infer_epochs")
    p.add_argument("--out", help="output vectors TSV")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("nearest", help="rank trained documents by cosine similarity",
                       epilog="output: record_id<TAB>cosine per line, descending; "
                              + _epilog("model"))
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--record", help="query with this trained record's vector")
    p.add_argument("--query", help="comma-separated floats as the query vector")
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(handler=cmd_nearest)

    p = sub.add_parser("eval", help="run one evaluation task end to end",
                       epilog=_epilog("events", "labels", "model", "report")
                       + "; exports: bow.tsv sparse row<TAB>col<TAB>value, "
                         "bow_columns.tsv, embedded.tsv dense, instances.tsv")
    _add_common(p)
    p.add_argument("--events")
    p.add_argument("--labels")
    p.add_argument("--model")
    p.add_argument("--task", help="dx-onset | med-start | procedure | null")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="output report JSON")
    p.add_argument("--export-dir", dest="export_dir",
                   help="export feature matrices for external classifiers")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("project", help="fit a 2-component PCA of embedded vectors",
                       epilog=_epilog("vectors", "projection"))
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--vectors", help="vectors TSV (default: model doc vectors)")
    p.add_argument("--out", help="projected 2-D TSV")
    p.add_argument("--params-out", dest="params_out", help="projection JSON sidecar")
    p.set_defaults(handler=cmd_project)

    p = sub.add_parser("trajectory", help="project one record through time",
                       epilog=_epilog("trajectory", "projection"))
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--events")
    p.add_argument("--labels", help="labels TSV for the event-day marker")
    p.add_argument("--record", required=True)
    p.add_argument("--projection", required=True, help="projection JSON from `project`")
    p.add_argument("--checkpoints", help="comma-separated cutoff days")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_trajectory)

    return parser


_FLAG_TO_CONFIG = {
    "seed": ("global", "seed"),
    "n_records": ("gen", "n_records"),
    "target_rate": ("gen", "target_rate"),
    "positive_fraction": ("gen", "positive_fraction"),
    "min_count": ("vocab", "min_count"),
    "group_depth": ("vocab", "group_depth"),
    "mode": ("train", "mode"),
    "objective": ("train", "objective"),
    "k": ("train", "k"),
    "window": ("train", "window"),
    "epochs": ("train", "epochs"),
    "workers": ("train", "workers"),
    "num_negatives": ("train", "num_negatives"),
    "initial_alpha": ("train", "initial_alpha"),
    "final_alpha": ("train", "final_alpha"),
    "infer_epochs": ("infer", "epochs"),
    "task": ("eval", "task"),
    "horizon": ("eval", "horizon"),
}


def _overrides_from_args(args) -> dict:
    overrides: dict[str, dict] = {}
    for attr, (sec, key) in _FLAG_TO_CONFIG.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.setdefault(sec, {})[key] = value
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, _overrides_from_args(args))
        fp = cfgmod.fingerprint(cfg)
        return args.handler(cfg, fp, args)
    except SeqvecError as exc:
        print(f"error: {exc.error_class}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return MissingInputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
