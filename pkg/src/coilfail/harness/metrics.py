"""Confusion counts and the derived classification measures.

Broken (label 1) is the positive class. Measures are stored as fractions in
[0, 1]; ``as_percentages`` renders them the way result tables print them.
Rates are row-normalized: ``tn_rate + fp_rate == 1`` over actual normals and
``fn_rate + tp_rate == 1`` over actual broken windows.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

__all__ = ["ConfusionMatrix", "MetricsReport", "MEASURES", "confusion", "metrics", "mean_report",
           "pooled_report"]

MEASURES = ("accuracy", "precision", "recall", "f_score", "tn_rate", "fp_rate", "fn_rate", "tp_rate")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def prevalence(self):
        return (self.tp + self.fn) / self.total if self.total else 0.0

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    tn_rate: float
    fp_rate: float
    fn_rate: float
    tp_rate: float
    prevalence: float
    n: int
    undefined: tuple = field(default_factory=tuple)

    def to_dict(self):
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["undefined"] = tuple(d.get("undefined", ()))
        return cls(**d)

    def as_percentages(self):
        return {m: 100.0 * getattr(self, m) for m in MEASURES}


def confusion(predictions, labels):
    """Count outcomes; both inputs are sequences of 0 (normal) / 1 (broken)."""
    p = np.asarray(predictions, dtype=np.int64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} labels")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise ValueError("predictions and labels must be 0 or 1")
    return ConfusionMatrix(tp=int(np.sum((p == 1) & (y == 1))), fp=int(np.sum((p == 1) & (y == 0))),
                           tn=int(np.sum((p == 0) & (y == 0))), fn=int(np.sum((p == 0) & (y == 1))))


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return Fraction(0)
    return Fraction(num, den)


def metrics(cm):
    """Derive all measures from ``cm``; zero denominators give 0 and an ``undefined`` flag."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    undefined = []
    acc = Fraction(cm.tp + cm.tn, cm.total)
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", undefined)
    f = _ratio(2 * precision * recall, precision + recall, "f_score", undefined)
    tn_rate = _ratio(cm.tn, cm.tn + cm.fp, "tn_rate", undefined)
    fp_rate = _ratio(cm.fp, cm.tn + cm.fp, "fp_rate", undefined)
    tp_rate = _ratio(cm.tp, cm.tp + cm.fn, "tp_rate", undefined)
    fn_rate = _ratio(cm.fn, cm.tp + cm.fn, "fn_rate", undefined)
    return MetricsReport(
        accuracy=float(acc), precision=float(precision), recall=float(recall), f_score=float(f),
        tn_rate=float(tn_rate), fp_rate=float(fp_rate), fn_rate=float(fn_rate), tp_rate=float(tp_rate),
        prevalence=float(Fraction(cm.tp + cm.fn, cm.total)), n=cm.total, undefined=tuple(undefined),
    )


def mean_report(reports):
    """Arithmetic mean of each measure across folds."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    out = {m: float(np.mean([getattr(r, m) for r in reports])) for m in MEASURES + ("prevalence",)}
    out["folds"] = len(reports)
    out["folds_with_undefined"] = sum(bool(r.undefined) for r in reports)
    return out


def pooled_report(matrices):
    """Metrics of the summed confusion counts."""
    total = ConfusionMatrix()
    for cm in matrices:
        total = total + cm
    return metrics(total)
