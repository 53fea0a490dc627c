"""Coil telemetry data model, file I/O, normalization, windowing and coil-level splits.

File schema (CSV with header, or JSONL with one object per line)::

    coil_id,timestamp,cnl,csp,ssr,csi,label

``timestamp`` is integer epoch seconds or an ISO-8601 string (naive times are
taken as UTC); ``label`` is ``normal`` or ``broken``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FEATURES = ("cnl", "csp", "ssr", "csi")
COLUMNS = ("coil_id", "timestamp") + FEATURES + ("label",)
LABELS = ("normal", "broken")
LABEL_TO_INT = {name: i for i, name in enumerate(LABELS)}
WINDOW_LENGTH = 40

__all__ = [
    "FEATURES",
    "COLUMNS",
    "LABELS",
    "LABEL_TO_INT",
    "WINDOW_LENGTH",
    "ParseError",
    "LeakageError",
    "FeatureRecord",
    "CoilSequence",
    "Window",
    "Normalizer",
    "Fold",
    "load_sequences",
    "save_sequences",
    "sequences_to_bytes",
    "fit_normalizer",
    "apply_normalizer",
    "window_sequences",
    "windowing_report",
    "coil_labels",
    "stack_windows",
    "stratified_split",
    "leave_coils_out_folds",
    "assert_coil_disjoint",
]


class ParseError(ValueError):
    """Schema violation in a data file; ``line`` is 1-based."""

    def __init__(self, message, line=None, path=None):
        where = f"{path}:{line}: " if path is not None and line is not None else (f"line {line}: " if line else "")
        super().__init__(where + message)
        self.line = line
        self.path = path


class LeakageError(RuntimeError):
    """Evaluation coils leaked into fitting (normalizer, training, augmentation)."""


# ------------------------------------------------------------------ types
@dataclass(frozen=True)
class FeatureRecord:
    timestamp: float
    cnl: float
    csp: float
    ssr: float
    csi: float

    def __post_init__(self):
        for name in ("timestamp",) + FEATURES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite {name}: {getattr(self, name)!r}")

    def values(self):
        return (self.cnl, self.csp, self.ssr, self.csi)


@dataclass(frozen=True)
class CoilSequence:
    coil_id: str
    records: tuple
    label: str

    def __post_init__(self):
        if self.label not in LABEL_TO_INT:
            raise ValueError(f"unknown label {self.label!r}")
        if not self.records:
            raise ValueError(f"coil {self.coil_id!r} has no records")
        ts = [r.timestamp for r in self.records]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"records of coil {self.coil_id!r} are not time-ordered")

    def __len__(self):
        return len(self.records)

    @property
    def label_index(self):
        return LABEL_TO_INT[self.label]

    def values(self):
        """Feature matrix of shape [len(records), 4]."""
        return np.array([r.values() for r in self.records], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Window:
    """A fixed-length slice of one coil: ``values`` is [4, length]."""

    coil_id: str
    values: np.ndarray
    label: int
    synthetic: bool = False
    normalized: bool = False

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != len(FEATURES):
            raise ValueError(f"window values must be [4, length], got {self.values.shape}")
        if self.label not in (0, 1):
            raise ValueError(f"window label must be 0 or 1, got {self.label!r}")

    @property
    def length(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score statistics fitted on training coils only."""

    mean: np.ndarray
    std: np.ndarray
    fitted_on: frozenset = field(default_factory=frozenset)

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class Fold:
    index: int
    test: tuple
    rest: tuple


# -------------------------------------------------------------------- I/O
def _parse_timestamp(raw, line, path):
    if isinstance(raw, bool):
        raise ParseError(f"invalid timestamp {raw!r}", line, path)
    if isinstance(raw, (int, float)):
        value = float(raw)
    else:
        text = str(raw).strip()
        try:
            value = float(int(text))
        except ValueError:
            try:
                dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
            except ValueError:
                raise ParseError(f"invalid timestamp {raw!r}", line, path) from None
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            value = dt.timestamp()
    if not math.isfinite(value):
        raise ParseError(f"non-finite timestamp {raw!r}", line, path)
    return value


def _parse_float(raw, name, line, path):
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"{name}: not a number: {raw!r}", line, path) from None
    if not math.isfinite(value) or isinstance(raw, bool):
        raise ParseError(f"{name}: non-finite value {raw!r}", line, path)
    return value


def _rows_to_sequences(rows, path):
    """rows: iterable of (line number, mapping)."""
    grouped = {}
    labels = {}
    for line, row in rows:
        missing = [c for c in COLUMNS if c not in row]
        extra = [c for c in row if c not in COLUMNS]
        if missing or extra:
            raise ParseError(f"schema violation (missing={missing}, unexpected={extra})", line, path)
        coil = str(row["coil_id"])
        if not coil:
            raise ParseError("empty coil_id", line, path)
        label = str(row["label"]).strip()
        if label not in LABEL_TO_INT:
            raise ParseError(f"unknown label {label!r} (expected one of {LABELS})", line, path)
        if labels.setdefault(coil, label) != label:
            raise ParseError(f"coil {coil!r} has conflicting labels", line, path)
        record = FeatureRecord(_parse_timestamp(row["timestamp"], line, path),
                               *(_parse_float(row[f], f, line, path) for f in FEATURES))
        grouped.setdefault(coil, []).append(record)
    return [CoilSequence(coil, tuple(sorted(recs, key=lambda r: r.timestamp)), labels[coil])
            for coil, recs in grouped.items()]


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        suffix = Path(path).suffix.lower()
        fmt = {".csv": "csv", ".jsonl": "jsonl", ".json": "jsonl"}.get(suffix)
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"cannot determine data format for {path} (use csv or jsonl)")
    return fmt


def load_sequences(path, format=None):
    """Read a CSV or JSONL data file into per-coil sequences (first-appearance order)."""
    fmt = _infer_format(path, format)
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        log.warning("%s is empty; no sequences loaded", path)
        return []
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or sorted(reader.fieldnames) != sorted(COLUMNS):
            raise ParseError(f"header must contain exactly {list(COLUMNS)}, got {reader.fieldnames}", 1, path)
        rows = ((reader.line_num, row) for row in reader)
    else:
        def jsonl_rows():
            for n, raw in enumerate(text.splitlines(), start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", n, path) from None
                if not isinstance(obj, dict):
                    raise ParseError("each line must be a JSON object", n, path)
                yield n, obj
        rows = jsonl_rows()
    sequences = _rows_to_sequences(rows, path)
    if not sequences:
        log.warning("%s holds no records", path)
    return sequences


def _format_timestamp(ts):
    return int(ts) if float(ts).is_integer() else ts


def sequences_to_bytes(sequences, format="csv"):
    """Serialize sequences to the file schema; byte-stable for identical input."""
    buf = io.StringIO()
    if format == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for seq in sequences:
            for r in seq.records:
                writer.writerow([seq.coil_id, repr(_format_timestamp(r.timestamp))]
                                + [repr(float(v)) for v in r.values()] + [seq.label])
    elif format == "jsonl":
        for seq in sequences:
            for r in seq.records:
                obj = {"coil_id": seq.coil_id, "timestamp": _format_timestamp(r.timestamp)}
                obj.update({f: float(v) for f, v in zip(FEATURES, r.values())})
                obj["label"] = seq.label
                buf.write(json.dumps(obj, separators=(",", ":")) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")
    return buf.getvalue().encode("utf-8")


def save_sequences(sequences, path, format=None):
    from .checkpoint import atomic_write_bytes

    atomic_write_bytes(path, sequences_to_bytes(sequences, _infer_format(path, format)))


# ---------------------------------------------------------- normalization
def _feature_rows(data):
    """Stack records of sequences or windows into an [N, 4] matrix plus coil ids."""
    items = list(data)
    if not items:
        raise ValueError("cannot fit a normalizer on no data")
    if isinstance(items[0], CoilSequence):
        return np.concatenate([s.values() for s in items]), {s.coil_id for s in items}
    if isinstance(items[0], Window):
        if any(w.synthetic for w in items):
            raise LeakageError("normalizer must be fitted on original (non-synthetic) windows")
        return np.concatenate([w.values.T for w in items]), {w.coil_id for w in items}
    raise TypeError(f"expected CoilSequence or Window items, got {type(items[0]).__name__}")


def fit_normalizer(train, test_coils=()):
    """Fit per-feature mean and population std on training data.

    ``test_coils`` names the coils of the active evaluation fold; fitting on
    any of them raises :class:`LeakageError`.
    """
    values, coils = _feature_rows(train)
    leaked = coils & set(test_coils)
    if leaked:
        raise LeakageError(f"normalizer fit touches evaluation coils: {sorted(leaked)[:5]}")
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population convention (ddof=0)
    degenerate = [f for f, s in zip(FEATURES, std) if not s > 0]
    if degenerate:
        raise ValueError(f"zero-variance feature(s) {degenerate}; cannot normalize")
    return Normalizer(mean, std, frozenset(coils))


def apply_normalizer(normalizer, data):
    """Return z-scored copies of sequences or windows (windows may be normalized once)."""
    out = []
    for item in data:
        if isinstance(item, Window):
            if item.normalized:
                raise ValueError(f"window of coil {item.coil_id!r} is already normalized")
            vals = (item.values - normalizer.mean[:, None]) / normalizer.std[:, None]
            out.append(Window(item.coil_id, vals, item.label, item.synthetic, True))
        elif isinstance(item, CoilSequence):
            vals = (item.values() - normalizer.mean) / normalizer.std
            recs = tuple(FeatureRecord(r.timestamp, *row) for r, row in zip(item.records, vals.tolist()))
            out.append(CoilSequence(item.coil_id, recs, item.label))
        else:
            raise TypeError(f"cannot normalize {type(item).__name__}")
    return out


# --------------------------------------------------------------- windows
def window_sequences(sequences, length=WINDOW_LENGTH, stride=None):
    """Cut each coil into windows of ``length`` records, stepping by ``stride``.

    The trailing remainder shorter than ``length`` is dropped; coils shorter
    than one window contribute nothing (see :func:`windowing_report`).
    """
    stride = length if stride is None else stride
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be positive")
    windows = []
    short = 0
    for seq in sequences:
        vals = seq.values().T
        n = vals.shape[1]
        if n < length:
            short += 1
        for start in range(0, n - length + 1, stride):
            windows.append(Window(seq.coil_id, np.ascontiguousarray(vals[:, start:start + length]),
                                  seq.label_index))
    if short:
        log.warning("%d coil(s) shorter than %d records yielded no windows", short, length)
    return windows


def windowing_report(sequences, length=WINDOW_LENGTH, stride=None):
    """Per-coil window and dropped-record counts for :func:`window_sequences`."""
    stride = length if stride is None else stride
    per_coil = {}
    for seq in sequences:
        n = len(seq)
        count = 0 if n < length else (n - length) // stride + 1
        covered = 0 if count == 0 else min(n, (count - 1) * stride + length)
        per_coil[seq.coil_id] = {"records": n, "windows": count, "dropped": n - covered}
    return {
        "coils": len(per_coil),
        "windows": sum(v["windows"] for v in per_coil.values()),
        "dropped_records": sum(v["dropped"] for v in per_coil.values()),
        "short_coils": sorted(c for c, v in per_coil.items() if v["windows"] == 0),
        "per_coil": per_coil,
    }


def stack_windows(windows, dtype=np.float64):
    """Arrays ``X`` [n, 4, length], ``y`` [n] and coil ids [n] from windows."""
    if not windows:
        return np.zeros((0, len(FEATURES), WINDOW_LENGTH), dtype=dtype), np.zeros(0, dtype=np.int64), np.array([], dtype=object)
    X = np.stack([w.values for w in windows]).astype(dtype, copy=False)
    y = np.array([w.label for w in windows], dtype=np.int64)
    groups = np.array([w.coil_id for w in windows], dtype=object)
    return X, y, groups


# ---------------------------------------------------------------- splits
def coil_labels(items):
    """``coil_id -> label index`` from sequences or windows (first occurrence wins)."""
    out = {}
    for item in items:
        label = item.label_index if isinstance(item, CoilSequence) else item.label
        if out.setdefault(item.coil_id, label) != label:
            raise ValueError(f"coil {item.coil_id!r} carries both labels")
    return out


def _by_class(labels):
    classes = {0: [], 1: []}
    for coil in sorted(labels):
        classes[int(labels[coil])].append(coil)
    return classes


def stratified_split(labels, train_fraction=0.7, seed=0):
    """Split coils per class into train/validation at coil granularity.

    Each class contributes ``floor(train_fraction * n + 0.5)`` coils to
    training (ties round toward train), clamped so that a class with at
    least two coils keeps one on each side.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    classes = _by_class(labels)
    for cls, coils in classes.items():
        if not coils:
            raise ValueError(f"class {LABELS[cls]!r} is absent; stratified split impossible")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for cls in (0, 1):
        coils = list(classes[cls])
        rng.shuffle(coils)
        n = len(coils)
        n_train = math.floor(train_fraction * n + 0.5)
        if n >= 2:
            n_train = min(max(n_train, 1), n - 1)
        train += coils[:n_train]
        val += coils[n_train:]
    return sorted(train), sorted(val)


def leave_coils_out_folds(labels, k=10, seed=0):
    """Partition coils into ``k`` test folds, each holding both classes.

    Broken coils are dealt round-robin over the folds after a seeded
    shuffle, then normal coils continue the deal so fold sizes differ by at
    most one. Every fold's ``rest`` is the complement of its ``test``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    classes = _by_class(labels)
    if len(labels) < k:
        raise ValueError(f"k={k} folds need at least {k} coils, got {len(labels)}")
    for cls in (1, 0):
        if len(classes[cls]) < k:
            raise ValueError(f"only {len(classes[cls])} {LABELS[cls]} coils; cannot place one in each of {k} folds")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    slot = 0
    for cls in (1, 0):
        coils = list(classes[cls])
        rng.shuffle(coils)
        for coil in coils:
            buckets[slot % k].append(coil)
            slot += 1
    everything = set(labels)
    folds = []
    for i, bucket in enumerate(buckets):
        test = tuple(sorted(bucket))
        folds.append(Fold(i, test, tuple(sorted(everything - set(test)))))
    return folds


def assert_coil_disjoint(test_coils, *other_sets):
    """Raise :class:`LeakageError` if any test coil appears in the other sets."""
    test = set(test_coils)
    for other in other_sets:
        overlap = test & set(other)
        if overlap:
            raise LeakageError(f"coil(s) shared between evaluation and fitting data: {sorted(overlap)[:5]}")
