"""Leave-coils-out cross-validation and the augmentation sweep.

Per fold: the held-out coils form the test set; the remaining coils are
split 70/30 per class into train and validation; a z-score normalizer is
fitted on the train coils only; the train windows are optionally augmented;
the model is trained with validation-loss selection and scored on the
original test windows.

Seed rule for master seed ``s`` and fold ``i`` (see :func:`coilfail.seeding.sub_seed`):

* fold assignment   ``sub_seed(s, 100)``
* train/val split   ``sub_seed(s, 101, i)``
* weight init       ``sub_seed(s, 102, i)``
* shuffle, dropout  ``sub_seed(s, 103, i)``
* augmentation      ``sub_seed(s, 104, i)``

None of these depend on the augmentation target, so every sweep arm sees
the same folds, splits, initial weights and batch orders.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from ..augment import augment_dataset
from ..dataio import (
    apply_normalizer,
    assert_coil_disjoint,
    coil_labels,
    fit_normalizer,
    leave_coils_out_folds,
    sequences_to_bytes,
    stratified_split,
    window_sequences,
)
from ..models import ModelSpec, build_model
from ..seeding import sub_seed
from .metrics import ConfusionMatrix, MetricsReport, confusion, mean_report, metrics, pooled_report
from .training import TrainConfig, best_epoch, predict_windows, train

log = logging.getLogger(__name__)

__all__ = [
    "SEED_RULE",
    "FoldResult",
    "CVResult",
    "SweepResult",
    "dataset_digest",
    "run_fold",
    "cross_validate",
    "augmentation_sweep",
    "audit_cv_manifest",
    "audit_sweep",
]

SEED_RULE = ("folds: sub_seed(s, 100); split: sub_seed(s, 101, i); init: sub_seed(s, 102, i); "
             "train: sub_seed(s, 103, i); augment: sub_seed(s, 104, i)")


def dataset_digest(sequences):
    """SHA-256 of the canonical CSV encoding of ``sequences``."""
    return hashlib.sha256(sequences_to_bytes(sequences, "csv")).hexdigest()


@dataclass
class FoldResult:
    index: int
    test_coils: list
    train_coils: list
    val_coils: list
    normalizer: dict
    windows: dict
    confusion: ConfusionMatrix
    report: MetricsReport
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    model: object = None

    def to_manifest(self):
        return {
            "index": self.index,
            "test_coils": self.test_coils,
            "train_coils": self.train_coils,
            "val_coils": self.val_coils,
            "normalizer": self.normalizer,
            "windows": self.windows,
            "best_epoch": self.best_epoch,
            "confusion": self.confusion.to_dict(),
            "metrics": self.report.to_dict(),
        }


@dataclass
class CVResult:
    folds: list
    mean: dict
    pooled: MetricsReport
    manifest: dict


@dataclass
class SweepResult:
    arms: list  # [(target or None, CVResult)]
    manifest: dict

    def rows(self):
        out = []
        for target, result in self.arms:
            w = [f.windows for f in result.folds]
            broken = sum(x["train_broken"] for x in w)
            total = sum(x["train"] for x in w)
            out.append({"target": target, "train_broken": broken, "train_windows": total,
                        "train_broken_fraction": broken / total, **result.mean})
        return out


def run_fold(fold, sequences, labels, spec, config, seed, augment_target=None, keep_model=False):
    """Execute one fold end to end; pure given its arguments."""
    i = fold.index
    by_id = {s.coil_id: s for s in sequences}
    rest = {c: labels[c] for c in fold.rest}
    train_coils, val_coils = stratified_split(rest, 0.7, seed=sub_seed(seed, 101, i))
    assert_coil_disjoint(fold.test, train_coils, val_coils)
    assert_coil_disjoint(val_coils, train_coils)

    train_seqs = [by_id[c] for c in train_coils]
    norm = fit_normalizer(train_seqs, test_coils=set(fold.test) | set(val_coils))
    train_w = apply_normalizer(norm, window_sequences(train_seqs))
    val_w = apply_normalizer(norm, window_sequences([by_id[c] for c in val_coils]))
    test_w = apply_normalizer(norm, window_sequences([by_id[c] for c in fold.test]))
    n_original = len(train_w)
    if augment_target is not None:
        train_w = augment_dataset(train_w, augment_target, np.random.default_rng(sub_seed(seed, 104, i)))

    model = build_model(spec, seed=sub_seed(seed, 102, i), dtype=config.np_dtype)
    model, history = train(model, train_w, val_w, replace(config, seed=sub_seed(seed, 103, i)))
    if any(w.synthetic for w in test_w):
        raise AssertionError("synthetic window in evaluation set")
    preds, _ = predict_windows(model, test_w)
    cm = confusion(preds, [w.label for w in test_w])
    windows = {
        "train": len(train_w),
        "train_original": n_original,
        "train_broken": sum(w.label for w in train_w),
        "train_synthetic": len(train_w) - n_original,
        "val": len(val_w),
        "val_synthetic": sum(w.synthetic for w in val_w),
        "test": len(test_w),
        "test_broken": sum(w.label for w in test_w),
        "test_synthetic": sum(w.synthetic for w in test_w),
    }
    normalizer = {**norm.to_dict(), "fitted_on": sorted(norm.fitted_on)}
    return FoldResult(i, list(fold.test), train_coils, val_coils, normalizer, windows, cm,
                      metrics(cm) if cm.total else _empty_report(), history, best_epoch(history),
                      model if keep_model else None)


def _empty_report():
    return MetricsReport(*([0.0] * 9), n=0, undefined=("accuracy",))


def _run(folds, sequences, labels, spec, config, seed, augment_target, jobs, keep_models):
    args = (sequences, labels, spec, config, seed, augment_target, keep_models)
    if jobs == 1 or len(folds) == 1:
        return [run_fold(f, *args) for f in folds]
    return Parallel(n_jobs=jobs)(delayed(run_fold)(f, *args) for f in folds)


def cross_validate(sequences, spec, k=10, config=TrainConfig(), seed=0, augment_target=None, jobs=1,
                   keep_models=False, folds=None):
    """Run ``k``-fold leave-coils-out cross-validation.

    Returns a :class:`CVResult` with per-fold results, fold-averaged and
    pooled-count metrics, and a manifest recording every coil assignment,
    normalizer and seed.
    """
    spec = ModelSpec(spec) if isinstance(spec, str) else spec
    labels = coil_labels(sequences)
    if folds is None:
        folds = leave_coils_out_folds(labels, k=k, seed=sub_seed(seed, 100))
    results = _run(folds, sequences, labels, spec, config, seed, augment_target, jobs, keep_models)
    reports = [r.report for r in results]
    mean = mean_report(reports)
    pooled = pooled_report([r.confusion for r in results])
    manifest = {
        "kind": "cv",
        "spec": spec.to_dict(),
        "train_config": config.to_dict(),
        "k": len(folds),
        "seed": int(seed),
        "seed_rule": SEED_RULE,
        "augment_target": augment_target,
        "dataset": {
            "sha256": dataset_digest(sequences),
            "coils": len(labels),
            "broken_coils": int(sum(labels.values())),
        },
        "folds": [r.to_manifest() for r in results],
        "mean": mean,
        "pooled": pooled.to_dict(),
    }
    return CVResult(results, mean, pooled, manifest)


def augmentation_sweep(sequences, spec, targets=(None, 0.024, 0.026), k=10, config=TrainConfig(), seed=0,
                       jobs=1):
    """One cross-validation per augmentation target on shared folds and seeds."""
    spec = ModelSpec(spec) if isinstance(spec, str) else spec
    labels = coil_labels(sequences)
    folds = leave_coils_out_folds(labels, k=k, seed=sub_seed(seed, 100))
    arms = [(t, cross_validate(sequences, spec, k, config, seed, t, jobs, folds=folds)) for t in targets]
    manifest = {
        "kind": "sweep",
        "targets": list(targets),
        "seed": int(seed),
        "arms": [r.manifest for _, r in arms],
    }
    return SweepResult(arms, manifest)


# ------------------------------------------------------------------ audits
def audit_cv_manifest(manifest):
    """Protocol checks on a cross-validation manifest; returns a list of violations."""
    problems = []
    seen = {}
    all_coils = set()
    for fold in manifest["folds"]:
        i = fold["index"]
        test = set(fold["test_coils"])
        train, val = set(fold["train_coils"]), set(fold["val_coils"])
        all_coils |= test | train | val
        for c in test:
            if c in seen:
                problems.append(f"coil {c} in test folds {seen[c]} and {i}")
            seen[c] = i
        if test & (train | val):
            problems.append(f"fold {i}: test coils overlap fitting data: {sorted(test & (train | val))[:5]}")
        if train & val:
            problems.append(f"fold {i}: train and validation share coils")
        if set(fold["normalizer"]["fitted_on"]) != train:
            problems.append(f"fold {i}: normalizer not fitted on exactly the training coils")
        w = fold["windows"]
        if w["test_synthetic"] or w["val_synthetic"]:
            problems.append(f"fold {i}: synthetic windows in evaluation data")
        if fold["metrics"]["n"] != w["test"]:
            problems.append(f"fold {i}: metrics computed on {fold['metrics']['n']} windows, test has {w['test']}")
    if set(seen) != all_coils:
        problems.append("test folds do not cover every coil")
    return problems


def audit_sweep(manifest):
    """Arms must share folds, splits and seeds and differ only in augmentation."""
    problems = []
    arms = manifest["arms"]
    base = arms[0]
    for arm in arms:
        problems += [f"arm {arm['augment_target']}: {p}" for p in audit_cv_manifest(arm)]
        if arm["seed"] != base["seed"] or arm["train_config"] != base["train_config"]:
            problems.append(f"arm {arm['augment_target']}: seeds or config differ")
        for fa, fb in zip(arm["folds"], base["folds"]):
            for key in ("test_coils", "train_coils", "val_coils", "normalizer"):
                if fa[key] != fb[key]:
                    problems.append(f"arm {arm['augment_target']} fold {fa['index']}: {key} differs")
            if fa["windows"]["train_original"] != fb["windows"]["train_original"]:
                problems.append(f"arm {arm['augment_target']} fold {fa['index']}: original train windows differ")
    return problems
