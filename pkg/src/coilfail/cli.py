"""Command-line entry point: ``coilfail {generate,train,cv,sweep,evaluate}``.

Every command writes ``manifest.json`` into its output directory. Passing
that file back with ``--from-manifest`` reruns the command with the recorded
parameters; ``--out`` and ``--jobs`` may still be given since they do not
affect results.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import atomic_write_bytes, canonical_json, load_checkpoint, save_checkpoint
from .corpus import CorpusConfig, generate_corpus
from .dataio import (
    Fold,
    Normalizer,
    apply_normalizer,
    coil_labels,
    load_sequences,
    window_sequences,
    windowing_report,
)
from .harness import (
    MEASURES,
    TrainConfig,
    audit_cv_manifest,
    audit_sweep,
    augmentation_sweep,
    confusion,
    cross_validate,
    dataset_digest,
    metrics,
    predict_windows,
    run_fold,
)
from .manifest import ExperimentConfig, ManifestError, read_manifest, write_manifest
from .models import KINDS, ModelSpec

log = logging.getLogger("coilfail")

DATA_ENV = "COILFAIL_DATA"
MANIFEST = "manifest.json"

TRAIN_KEYS = ("epochs", "batch_size", "lr", "beta1", "beta2", "patience", "dtype")
PARAMS = {
    "generate": ("coils", "broken_frac", "days", "records_per_day", "shift", "format", "seed"),
    "train": ("model", "data", "seed", "augment_target") + TRAIN_KEYS,
    "cv": ("model", "all_models", "data", "k", "seed", "augment_target", "save_checkpoints") + TRAIN_KEYS,
    "sweep": ("model", "data", "k", "seed", "targets") + TRAIN_KEYS,
    "evaluate": ("checkpoint", "data", "coil_list"),
}
LABELS = {"fcn": "FCN", "resnet": "ResNet", "tcnn": "TCNN", "lstm": "LSTM"}
HEADERS = ("Accuracy", "Precision", "Recall", "F-Score", "TN", "FP", "FN", "TP")


class UsageError(Exception):
    """Bad flags or parameter values; maps to exit code 2."""


# --------------------------------------------------------------- parsing
def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--beta1", type=float, default=0.9)
    g.add_argument("--beta2", type=float, default=0.999)
    g.add_argument("--patience", type=int, default=20)
    g.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def _common(p, out_required=True):
    p.add_argument("--from-manifest", metavar="PATH", help="rerun with the parameters recorded in PATH")
    p.add_argument("--out", metavar="DIR", help="output directory" + (" (required)" if out_required else ""))
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")


def _data_flag(p):
    p.add_argument("--data", metavar="PATH",
                   help=f"dataset file or directory (default: ${DATA_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(prog="coilfail", description="Coil failure classification experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic coil corpus")
    _common(p)
    p.add_argument("--coils", type=int, default=1000)
    p.add_argument("--broken-frac", type=float, default=0.022)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--records-per-day", type=int, default=40)
    p.add_argument("--shift", type=float, default=CorpusConfig.shift,
                   help="defect level in units of the per-feature noise std")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model on a 70/30 coil split")
    _common(p)
    _data_flag(p)
    p.add_argument("--model", choices=KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-target", type=float, default=None)
    _train_flags(p)

    p = sub.add_parser("cv", help="k-fold leave-coils-out cross-validation")
    _common(p)
    _data_flag(p)
    p.add_argument("--model", choices=KINDS)
    p.add_argument("--all-models", action="store_true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-target", type=float, default=None)
    p.add_argument("--save-checkpoints", action="store_true", help="keep each fold's selected model")
    _train_flags(p)

    p = sub.add_parser("sweep", help="cross-validation per training augmentation target")
    _common(p)
    _data_flag(p)
    p.add_argument("--model", choices=KINDS, default="lstm")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--targets", default="none,0.024,0.026",
                   help="comma-separated broken fractions; 'none' is the unaugmented arm")
    _train_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    _common(p, out_required=False)
    _data_flag(p)
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--coil-list", metavar="PATH", help="file with one coil id per line to restrict evaluation")
    return parser


def _config_from(args):
    if args.from_manifest:
        try:
            config, _ = read_manifest(args.from_manifest)
            config = ExperimentConfig.from_dict(config.to_dict(), allowed=PARAMS[args.command])
        except OSError as exc:
            raise UsageError(f"cannot read manifest: {exc}") from None
        except ManifestError as exc:
            raise UsageError(str(exc)) from None
        if config.command != args.command:
            raise UsageError(f"manifest records a {config.command!r} run, not {args.command!r}")
        missing = set(PARAMS[args.command]) - set(config.params)
        if missing:
            raise UsageError(f"manifest lacks parameters {sorted(missing)}")
        return config
    params = {k: getattr(args, k) for k in PARAMS[args.command]}
    if args.command in ("train", "cv", "sweep", "evaluate"):
        params["data"] = params["data"] or os.environ.get(DATA_ENV)
    return ExperimentConfig(args.command, params)


def _parse_targets(text):
    out = []
    for part in str(text).split(","):
        part = part.strip().lower()
        if not part:
            continue
        if part == "none":
            out.append(None)
            continue
        try:
            value = float(part)
        except ValueError:
            raise UsageError(f"bad target {part!r}") from None
        if not 0 < value < 1:
            raise UsageError(f"target {value} outside (0, 1)")
        out.append(value)
    if not out:
        raise UsageError("no augmentation targets given")
    return out


def _train_config(p):
    try:
        return TrainConfig(epochs=p["epochs"], batch_size=p["batch_size"], learning_rate=p["lr"],
                           beta1=p["beta1"], beta2=p["beta2"], patience=p["patience"], dtype=p["dtype"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _validate(args, config):
    p = config.params
    if args.command != "evaluate" and not args.out:
        raise UsageError("--out is required")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if args.command in ("train", "cv", "sweep", "evaluate") and not p["data"]:
        raise UsageError(f"--data is required (or set ${DATA_ENV})")
    if args.command == "generate":
        try:
            CorpusConfig(n_coils=p["coils"], broken_fraction=p["broken_frac"], days=p["days"],
                         records_per_day=p["records_per_day"], shift=p["shift"], format=p["format"], seed=p["seed"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if args.command in ("train", "cv", "sweep"):
        _train_config(p)
    if args.command == "train" and not p["model"]:
        raise UsageError("--model is required")
    if args.command == "cv":
        if bool(p["model"]) == bool(p["all_models"]):
            raise UsageError("give exactly one of --model or --all-models")
    if args.command in ("cv", "sweep") and p["k"] < 2:
        raise UsageError("--k must be at least 2")
    if args.command in ("train", "cv") and p["augment_target"] is not None and not 0 < p["augment_target"] < 1:
        raise UsageError("--augment-target must lie in (0, 1)")
    if args.command == "sweep":
        _parse_targets(p["targets"])
    if args.command == "evaluate" and not p["checkpoint"]:
        raise UsageError("--checkpoint is required")


# --------------------------------------------------------------- helpers
def resolve_data(path):
    path = Path(path)
    if path.is_dir():
        for name in ("coils.csv", "coils.jsonl"):
            if (path / name).exists():
                return path / name
        raise FileNotFoundError(f"{path}: no coils.csv or coils.jsonl inside")
    return path


def _load(p):
    path = resolve_data(p["data"])
    sequences = load_sequences(path)
    return path, sequences


def _pct(x):
    return f"{100 * x:.2f}"


def _text_table(rows, label_key, label_title):
    header = [label_title, *HEADERS]
    body = [[str(r[label_key])] + [_pct(r[m]) for m in MEASURES] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(line, widths)))
             for line in [header, *body]]
    return "\n".join(lines) + "\n"


def _csv_bytes(rows, fields):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})
    return buf.getvalue().encode("utf-8")


def _write(out, name, payload):
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    atomic_write_bytes(Path(out) / name, payload)


def _json_bytes(obj):
    return (canonical_json(obj) + "\n").encode("utf-8")


HISTORY_FIELDS = ("model", "fold", "epoch", "train_loss", "val_loss", "val_accuracy")


def _history_rows(kind, fold, history):
    return [{"model": kind, "fold": fold, **h} for h in history]


def _checkpoint_metadata(fold, digest, config):
    return {
        "normalizer": fold.normalizer,
        "train_coils": fold.train_coils,
        "val_coils": fold.val_coils,
        "test_coils": fold.test_coils,
        "best_epoch": fold.best_epoch,
        "best_val_loss": min((h["val_loss"] for h in fold.history), default=None),
        "train_config": config.to_dict(),
        "dataset_sha256": digest,
    }


# -------------------------------------------------------------- commands
def cmd_generate(p, args):
    cfg = CorpusConfig(n_coils=p["coils"], broken_fraction=p["broken_frac"], days=p["days"],
                       records_per_day=p["records_per_day"], shift=p["shift"], format=p["format"], seed=p["seed"])
    out = generate_corpus(cfg, args.out)
    counts = out["class_counts"]
    print(f"wrote {out['data']} ({counts['normal']} normal, {counts['broken']} broken coils)")
    return {"class_counts": counts, "data_file": out["data"].name,
            "data_sha256": json.loads(Path(out["manifest"]).read_text())["data_sha256"]}


def cmd_train(p, args):
    path, sequences = _load(p)
    config = _train_config(p)
    labels = coil_labels(sequences)
    fold = Fold(0, (), tuple(sorted(labels)))
    result = run_fold(fold, sequences, labels, ModelSpec(p["model"]), config, p["seed"],
                      augment_target=p["augment_target"], keep_model=True)
    if p["epochs"] == 0:
        log.warning("--epochs 0: saving the initialized model")
    digest = dataset_digest(sequences)
    out = Path(args.out)
    save_checkpoint(result.model, out / "model.ckpt", metadata=_checkpoint_metadata(result, digest, config))
    _write(out, "history.csv", _csv_bytes(_history_rows(p["model"], 0, result.history), HISTORY_FIELDS))
    best = min((h["val_loss"] for h in result.history), default=None)
    print(f"trained {p['model']} on {len(result.train_coils)} coils; "
          f"best validation loss {best if best is None else f'{best:.6f}'} at epoch {result.best_epoch}")
    return {"dataset_sha256": digest, "best_epoch": result.best_epoch, "best_val_loss": best,
            "train_coils": result.train_coils, "val_coils": result.val_coils, "windows": result.windows}


def cmd_cv(p, args):
    path, sequences = _load(p)
    config = _train_config(p)
    kinds = list(KINDS) if p["all_models"] else [p["model"]]
    out = Path(args.out)
    rows, fold_rows, history, manifests, problems = [], [], [], {}, []
    for kind in kinds:
        res = cross_validate(sequences, ModelSpec(kind), k=p["k"], config=config, seed=p["seed"],
                             augment_target=p["augment_target"], jobs=args.jobs,
                             keep_models=p["save_checkpoints"])
        manifests[kind] = res.manifest
        problems += [f"{kind}: {x}" for x in audit_cv_manifest(res.manifest)]
        rows.append({"model": LABELS[kind], **res.mean, **{f"pooled_{m}": getattr(res.pooled, m) for m in MEASURES}})
        for f in res.folds:
            fold_rows.append({"model": LABELS[kind], "fold": f.index, **f.report.to_dict(), **f.confusion.to_dict(),
                              "undefined": ";".join(f.report.undefined)})
            history += _history_rows(kind, f.index, f.history)
            if p["save_checkpoints"]:
                save_checkpoint(f.model, out / "checkpoints" / f"{kind}-fold{f.index}.ckpt",
                                metadata=_checkpoint_metadata(f, res.manifest["dataset"]["sha256"], config))
    table = _text_table(rows, "model", "Model")
    _write(out, "table.txt", table)
    _write(out, "metrics.csv", _csv_bytes(rows, ["model", *MEASURES, "prevalence", "folds", "folds_with_undefined",
                                                 *(f"pooled_{m}" for m in MEASURES)]))
    _write(out, "metrics.json", _json_bytes({"models": rows}))
    _write(out, "folds.csv", _csv_bytes(fold_rows, ["model", "fold", *MEASURES, "prevalence", "n", "tp", "fp", "tn",
                                                    "fn", "undefined"]))
    _write(out, "history.csv", _csv_bytes(history, HISTORY_FIELDS))
    print(table, end="")
    if problems:
        raise RuntimeError("protocol audit failed: " + "; ".join(problems))
    return {"runs": manifests, "audit": problems}


def _arm_label(target, row):
    return f"{row['train_broken']} ({100 * row['train_broken_fraction']:.1f}%)" + ("" if target is None else
                                                                                 f" target {target}")


def cmd_sweep(p, args):
    path, sequences = _load(p)
    config = _train_config(p)
    targets = _parse_targets(p["targets"])
    res = augmentation_sweep(sequences, ModelSpec(p["model"]), targets=targets, k=p["k"], config=config,
                             seed=p["seed"], jobs=args.jobs)
    rows = res.rows()
    for row in rows:
        row["arm"] = _arm_label(row["target"], row)
        row["target"] = "none" if row["target"] is None else row["target"]
    problems = audit_sweep(res.manifest)
    out = Path(args.out)
    table = _text_table(rows, "arm", "Broken train windows")
    _write(out, "sweep.txt", table)
    _write(out, "sweep.csv", _csv_bytes(rows, ["target", "train_broken", "train_windows", "train_broken_fraction",
                                               *MEASURES, "folds_with_undefined"]))
    _write(out, "sweep.json", _json_bytes({"model": p["model"], "arms": rows}))
    print(table, end="")
    if problems:
        raise RuntimeError("sweep audit failed: " + "; ".join(problems))
    return {"sweep": res.manifest, "audit": problems}


def cmd_evaluate(p, args):
    model = load_checkpoint(p["checkpoint"])
    meta = model.metadata or {}
    if "normalizer" not in meta:
        raise ValueError(f"{p['checkpoint']}: no normalizer statistics in checkpoint metadata")
    norm = Normalizer(np.asarray(meta["normalizer"]["mean"]), np.asarray(meta["normalizer"]["std"]))
    path = resolve_data(p["data"])
    sequences = load_sequences(path)
    if p["coil_list"]:
        wanted = {line.strip() for line in Path(p["coil_list"]).read_text().splitlines() if line.strip()}
        unknown = wanted - {s.coil_id for s in sequences}
        if unknown:
            raise ValueError(f"coil list names unknown coils: {sorted(unknown)[:5]}")
        sequences = [s for s in sequences if s.coil_id in wanted]
    windows = apply_normalizer(norm, window_sequences(sequences))
    preds, _ = predict_windows(model, windows)
    cm = confusion(preds, [w.label for w in windows])
    if cm.total == 0:
        log.warning("no windows to evaluate; metrics undefined")
        report = {"n": 0, "undefined": ["all"], **{m: 0.0 for m in MEASURES}}
    else:
        report = metrics(cm).to_dict()
    result = {"model": model.spec.kind, "confusion": cm.to_dict(), "metrics": report,
              "windowing": {k: v for k, v in windowing_report(sequences).items() if k != "per_coil"}}
    if args.out:
        _write(args.out, "evaluation.json", _json_bytes(result))
    print(_text_table([{"model": LABELS[model.spec.kind], **report}], "model", "Model"), end="")
    return result


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "cv": cmd_cv, "sweep": cmd_sweep, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on bad flags, 0 for --help/--version
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from(args)
        _validate(args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"coilfail {args.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        result = COMMANDS[args.command](config.params, args)
        if args.out:
            write_manifest(Path(args.out) / MANIFEST, config, result)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        if args.verbose:
            log.exception("command failed")
        print(f"coilfail {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
