"""``gopforge`` command-line tool: train, eval, report, inspect.

stdout carries machine-readable output only (JSON or CSV); messages go to
stderr.  Exit codes: 0 ok, 2 configuration / usage / schema, 3 progression
failure, 4 I/O or corrupt file.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import statistics
import sys
from collections import defaultdict

import numpy as np

from . import data as datamod
from .config import SCHEMA_VERSION, ConfigError, load_config, with_overrides
from .errors import GopError, ProgressionError, TrainingError, ValidationError
from .model import ModelFileError, load_model, read_manifest, save_model
from .progressive import ProgressionData, progress
from .search import resolve_workers, write_sweep_csv
from .training import write_curve_csv

EXIT_OK, EXIT_CONFIG, EXIT_PROGRESSION, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("gopforge")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- data

def load_dataset(cfg):
    """The configured dataset, split and (optionally) standardised; raw features are kept too."""
    src = cfg.data
    try:
        if src["source"] == "synthetic":
            params = {k: v for k, v in src.items() if k not in ("source", "kind")}
            ds = datamod.make_synthetic(src["kind"], **params)
        elif src["source"] == "csv":
            ds = datamod.load_csv(src["path"], src["label_column"], src.get("feature_columns"),
                                  name=os.path.basename(src["path"]))
        else:
            X = datamod.read_gopm(src["features"])
            y = datamod.read_gopm(src["labels"])
            if y.shape != (X.shape[0], 1) or np.any(y != np.round(y)) or np.any(y < 0):
                raise CliError(EXIT_CONFIG, f"{src['labels']}: expected an {X.shape[0]}x1 matrix of class indices")
            y = y[:, 0].astype(np.int64)
            ds = datamod.Dataset(X, y, [str(c) for c in range(int(y.max()) + 1)],
                                 name=os.path.basename(src["features"]))
    except (datamod.DataFormatError, OSError) as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    except TypeError as exc:
        raise CliError(EXIT_CONFIG, f"config field 'data': {exc}") from None
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"data: {exc}") from None
    try:
        ds = datamod.split_dataset(ds, cfg.split_fractions, cfg.split_seed)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"split: {exc}") from None
    raw = ds
    if cfg.standardize:
        ds = datamod.standardize(ds)
    return raw, ds


def _dataset_label(cfg):
    src = cfg.data
    if src["source"] == "synthetic":
        return src["kind"]
    return os.path.splitext(os.path.basename(src.get("path") or src.get("features")))[0]


# ---------------------------------------------------------------- train

def _write_steps_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "candidates", "best_opset_nodal", "best_opset_pool", "best_opset_act",
                    "best_loss", "val_acc", "stopped", "seconds"])
        for r in history:
            w.writerow([r.step, r.candidates, *r.opset, repr(r.best_loss), repr(r.accuracy),
                        int(r.stopped), f"{r.seconds:.4f}"])


def cmd_train(args):
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, workers=args.workers, seed=args.seed, out_dir=args.out)
        cfg.workers = resolve_workers(cfg.workers)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"workers: {exc}") from None
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from None
    raw, ds = load_dataset(cfg)
    if cfg.template.input_dim != ds.num_features:
        raise CliError(EXIT_CONFIG, f"config field 'template': input size {cfg.template.input_dim} "
                                    f"but the data has {ds.num_features} features")
    if cfg.template.output_dim != ds.num_classes:
        raise CliError(EXIT_CONFIG, f"config field 'template': output size {cfg.template.output_dim} "
                                    f"but the data has {ds.num_classes} classes")
    X_tr, y_tr = ds.part("train")
    X_va, y_va = ds.part("val")
    pdata = ProgressionData(X_tr, y_tr, ds.num_classes, X_va if len(y_va) else None,
                            y_va if len(y_va) else None)
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {cfg.out_dir}: {exc}") from None
    try:
        result = progress(cfg.algorithm, pdata, cfg.template, cfg.progressive_config(), cfg.memory_kind)
    except (ProgressionError, TrainingError) as exc:
        raise CliError(EXIT_PROGRESSION, f"progression failed: {exc}") from None
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None

    model = result.model
    if cfg.standardize:
        model.input_mean, model.input_scale = ds.mean.copy(), ds.scale.copy()
    model.info.update({
        "config": cfg.echo(),
        "class_names": list(ds.class_names),
        "feature_names": list(ds.feature_names),
        "data_sha256": hashlib.sha256(np.ascontiguousarray(raw.X).tobytes()
                                      + raw.labels.astype("<i8").tobytes()).hexdigest(),
    })
    accs = {}
    for part in datamod.SPLIT_NAMES:
        Xp, yp = raw.part(part)
        accs[part] = float(np.mean(model.predict(Xp) == yp)) if len(yp) else None

    try:
        save_model(model, cfg.model_path)
        _write_steps_csv(os.path.join(cfg.out_dir, "steps.csv"), result.history)
        sweeps_path = os.path.join(cfg.out_dir, "sweeps.csv")
        if os.path.exists(sweeps_path):
            os.remove(sweeps_path)
        last = {}
        for step, phase, sw in result.sweeps:
            write_sweep_csv(sweeps_path, sw, append=True, extra={"step": step, "phase": phase})
            last[step] = sw
        for step, sw in last.items():
            write_curve_csv(os.path.join(cfg.out_dir, f"curve_step{step}.csv"), sw.winner.result.curve)
        if result.finetune_curve:
            write_curve_csv(os.path.join(cfg.out_dir, "curve_finetune.csv"), result.finetune_curve)
        datamod.write_csv(os.path.join(cfg.out_dir, "data.csv"), raw)
        datamod.write_split_manifest(os.path.join(cfg.out_dir, "splits.csv"), raw)
        summary = {
            "schema_version": SCHEMA_VERSION,
            "algorithm": cfg.algorithm,
            "memory_kind": cfg.memory_kind,
            "dataset": _dataset_label(cfg),
            "run_seed": cfg.run_seed,
            "workers": cfg.workers,
            "accuracy": accs,
            "steps": len(result.history),
            "candidates": result.candidate_count,
            "seconds_total": result.seconds,
            "seconds_per_layer": result.seconds / max(1, len(result.history)),
            "topology": model.info["template"][:1] + [model.block_output_width(k)
                                                     for k in range(len(model.blocks))]
                        + [model.output_dim],
            "model": cfg.model_name,
        }
        with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        with open(os.path.join(cfg.out_dir, "config.json"), "w") as fh:
            json.dump(cfg.echo(), fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write run outputs: {exc}") from None
    log.info("train/val/test accuracy: %s", accs)
    json.dump({"accuracy": accs, "model": cfg.model_path, "steps": len(result.history)}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _load_model_or_exit(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read model {path}: {exc.strerror}") from None
    except (ModelFileError, KeyError, ValueError) as exc:
        raise CliError(EXIT_IO, f"{path}: corrupt model file: {exc}") from None


def cmd_eval(args):
    model = _load_model_or_exit(args.model)
    names = model.info.get("feature_names")
    classes = model.info.get("class_names") or [str(c) for c in range(model.output_dim)]
    try:
        with open(args.data, newline="") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.data}: {exc.strerror}") from None
    if args.label_column not in header:
        raise CliError(EXIT_CONFIG, f"{args.data}: missing label column {args.label_column!r}")
    if names:
        missing = [c for c in names if c not in header]
        if missing:
            present = len([c for c in names if c in header])
            raise CliError(EXIT_CONFIG, f"dimension mismatch: model expects {len(names)} features "
                                        f"({', '.join(names[:4])}{', ...' if len(names) > 4 else ''}); "
                                        f"{args.data} provides {present} of them, missing {missing[:5]}")
    else:
        feats = [h for h in header if h != args.label_column]
        if len(feats) != model.input_dim:
            raise CliError(EXIT_CONFIG, f"dimension mismatch: model expects {model.input_dim} features, "
                                        f"{args.data} has {len(feats)}")
    try:
        ds = datamod.load_csv(args.data, args.label_column, names, class_names=classes)
    except datamod.DataFormatError as exc:
        raise CliError(EXIT_IO, str(exc)) from None
    idx = np.arange(len(ds.labels))
    if args.split:
        if not args.splits:
            raise CliError(EXIT_CONFIG, "--split needs --splits MANIFEST")
        try:
            split = datamod.read_split_manifest(args.splits, len(ds.labels))
        except (OSError, datamod.DataFormatError, KeyError, ValueError) as exc:
            raise CliError(EXIT_IO, f"cannot read split manifest: {exc}") from None
        idx = np.flatnonzero(split == datamod.SPLIT_NAMES.index(args.split))
    X, y = ds.X[idx], ds.labels[idx]
    scores = model.predict_proba(X)
    pred = np.argmax(scores, axis=1)
    C = model.output_dim
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    acc = float(np.mean(pred == y)) if len(y) else None
    out_dir = args.out or "."
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", "true", "predicted"] + [f"score_{c}" for c in classes])
            for i, t, p, s in zip(idx, y, pred, scores):
                w.writerow([int(i), classes[t], classes[p]] + [repr(float(v)) for v in s])
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write predictions: {exc}") from None
    json.dump({"accuracy": acc, "samples": int(len(y)), "classes": list(classes),
               "confusion": confusion.tolist()}, sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------- report

def _collect_runs(run_dir):
    if not os.path.isdir(run_dir):
        raise CliError(EXIT_CONFIG, f"{run_dir}: not a directory")
    found = []
    for root, _, files in os.walk(run_dir):
        if "summary.json" in files:
            found.append(os.path.join(root, "summary.json"))
    if not found:
        raise CliError(EXIT_CONFIG, f"{run_dir}: no run summaries found")
    runs = []
    for path in sorted(found):
        try:
            with open(path) as fh:
                s = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_IO, f"{path}: unreadable summary: {exc}") from None
        if s.get("schema_version") != SCHEMA_VERSION:
            raise CliError(EXIT_CONFIG, f"{path}: schema_version {s.get('schema_version')!r} "
                                        f"is incompatible with {SCHEMA_VERSION}")
        runs.append((path, s))
    return runs


def _algo_label(s):
    return s["algorithm"] + (f"-{s['memory_kind']}" if s.get("memory_kind") else "")


def cmd_report(args):
    runs = _collect_runs(args.run_dir)
    groups = defaultdict(list)
    long_rows = []
    for path, s in runs:
        key = (_algo_label(s), s["dataset"])
        groups[key].append(s)
        run = os.path.relpath(os.path.dirname(path), args.run_dir)
        for part, value in s["accuracy"].items():
            if value is not None:
                long_rows.append([run, key[0], key[1], s["run_seed"], f"{part}_accuracy", repr(value)])
        long_rows.append([run, key[0], key[1], s["run_seed"], "seconds_per_layer", repr(s["seconds_per_layer"])])
        long_rows.append([run, key[0], key[1], s["run_seed"], "steps", s["steps"]])

    def med(values):
        values = [v for v in values if v is not None]
        return repr(statistics.median(values)) if values else ""

    header = ["algorithm", "dataset", "runs", "seeds", "test_accuracy_median", "val_accuracy_median",
              "train_accuracy_median", "seconds_per_layer_median", "steps_median"]
    table = []
    for (algo, dataset), ss in sorted(groups.items()):
        table.append([algo, dataset, len(ss), " ".join(str(s["run_seed"]) for s in ss),
                      med([s["accuracy"]["test"] for s in ss]), med([s["accuracy"]["val"] for s in ss]),
                      med([s["accuracy"]["train"] for s in ss]), med([s["seconds_per_layer"] for s in ss]),
                      med([s["steps"] for s in ss])])
    out_dir = args.out or args.run_dir
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows([header] + table)
        with open(os.path.join(out_dir, "comparison_long.csv"), "w", newline="") as fh:
            csv.writer(fh).writerows([["run", "algorithm", "dataset", "seed", "metric", "value"]] + long_rows)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write report: {exc}") from None
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerows([header] + table)
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def cmd_inspect(args):
    try:
        with open(args.model, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read model {args.model}: {exc.strerror}") from None
    _load_model_or_exit(args.model)  # full integrity check, not just the header
    manifest, _ = read_manifest(data)
    json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="gopforge", description="Progressive GOP network construction.")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a progression from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--workers", type=int)
    t.add_argument("--seed", type=int, help="overrides run_seed")
    t.add_argument("--out", help="output directory (overrides output.dir)")
    t.add_argument("--format", choices=["csv"], default="csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a CSV dataset")
    e.add_argument("model")
    e.add_argument("data")
    e.add_argument("--label-column", default="label")
    e.add_argument("--splits", help="split manifest CSV (sample_index, split)")
    e.add_argument("--split", choices=datamod.SPLIT_NAMES)
    e.add_argument("--out", help="directory for predictions.csv (default: cwd)")
    e.add_argument("--format", choices=["csv"], default="csv")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate run summaries under a directory")
    r.add_argument("run_dir")
    r.add_argument("--out", help="directory for the report files (default: run_dir)")
    r.add_argument("--format", choices=["csv"], default="csv")
    r.set_defaults(func=cmd_report)

    i = sub.add_parser("inspect", help="print a model manifest as JSON")
    i.add_argument("model")
    i.set_defaults(func=cmd_inspect)
    return p


class _StderrHandler(logging.Handler):
    # resolves sys.stderr at emit time so redirected streams are honoured
    def emit(self, record):
        print(self.format(record), file=sys.stderr)


def _setup_logging(quiet):
    root = logging.getLogger("gopforge")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        root.addHandler(_StderrHandler())
    root.setLevel(logging.WARNING if quiet else logging.INFO)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"gopforge {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except GopError as exc:
        print(f"gopforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_PROGRESSION


if __name__ == "__main__":
    sys.exit(main())
