"""Synthetic coil-telemetry corpus standing in for fleet data.

Each coil gets its own baseline per feature plus AR(1) measurement noise.
Broken coils additionally drift: from a sampled onset the affected features
rise along a logistic curve toward a level shifted by ``shift`` noise
standard deviations.

Seeds: coil ``i`` draws from ``SeedSequence([seed, 1, i])``; the choice of
broken coils draws from ``SeedSequence([seed, 0])``. Both are recorded in
the corpus manifest.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write_bytes, canonical_json
from .dataio import FEATURES, CoilSequence, FeatureRecord, sequences_to_bytes
from .seeding import sub_seed

__all__ = ["CorpusConfig", "sub_seed", "broken_count", "generate_sequences", "generate_corpus"]

START_EPOCH = 1556668800  # 2019-05-01T00:00:00Z


@dataclass
class CorpusConfig:
    n_coils: int = 1000
    records_per_day: int = 40
    days: int = 1
    broken_fraction: float = 0.022
    feature_means: tuple = (12.0, 60.0, 1.0, 30.0)
    coil_spread: tuple = (0.3, 1.5, 0.02, 0.75)
    noise_std: tuple = (0.3, 1.5, 0.02, 0.75)
    noise_ar: float = 0.5
    shift: float = 8.0
    shift_direction: tuple = (1, 1, 1, 1)
    onset_range: tuple = (0.1, 0.6)
    rise_width: tuple = (0.5, 3.0)
    record_interval: int = 600
    seed: int = 0
    format: str = "csv"

    def __post_init__(self):
        for name in ("feature_means", "coil_spread", "noise_std", "shift_direction", "onset_range", "rise_width"):
            setattr(self, name, tuple(getattr(self, name)))
        if min(self.n_coils, self.records_per_day, self.days, self.record_interval) < 1:
            raise ValueError("coil, record, day and interval counts must be positive")
        if not 0.0 < self.broken_fraction < 1.0:
            raise ValueError("broken_fraction must lie in (0, 1)")
        for name in ("feature_means", "coil_spread", "noise_std", "shift_direction"):
            if len(getattr(self, name)) != len(FEATURES):
                raise ValueError(f"{name} needs one entry per feature")
        if any(s <= 0 for s in self.noise_std) or any(s < 0 for s in self.coil_spread):
            raise ValueError("noise_std must be positive and coil_spread non-negative")
        if not -1.0 < self.noise_ar < 1.0:
            raise ValueError("noise_ar must lie in (-1, 1)")
        lo, hi = self.onset_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("onset_range must be an ordered pair in [0, 1]")
        if not 0.0 < self.rise_width[0] <= self.rise_width[1]:
            raise ValueError("rise_width must be an ordered positive pair")
        if self.format not in ("csv", "jsonl"):
            raise ValueError("format must be csv or jsonl")

    @property
    def records_per_coil(self):
        return self.records_per_day * self.days

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown corpus config keys: {sorted(unknown)}")
        return cls(**d)


def broken_count(n_coils, fraction):
    """Broken coils for a corpus: round half up, at least one."""
    return max(1, math.floor(n_coils * fraction + 0.5))


def _coil(i, broken, cfg):
    seed = sub_seed(cfg.seed, 1, i)
    rng = np.random.default_rng(seed)
    n = cfg.records_per_coil
    means = np.asarray(cfg.feature_means)
    noise = np.asarray(cfg.noise_std)
    baseline = means + np.asarray(cfg.coil_spread) * rng.standard_normal(4)
    innov = rng.standard_normal((n, 4)) * noise * math.sqrt(1.0 - cfg.noise_ar ** 2)
    e = np.empty((n, 4))
    e[0] = rng.standard_normal(4) * noise
    for t in range(1, n):
        e[t] = cfg.noise_ar * e[t - 1] + innov[t]
    values = baseline + e
    info = {"index": i, "seed": seed, "label": "broken" if broken else "normal"}
    if broken:
        affected = []
        while not affected:
            affected = [f for f in range(4) if rng.random() < 0.5]
        onset = rng.uniform(*cfg.onset_range) * (n - 1)
        width = rng.uniform(*cfg.rise_width)
        t = np.arange(n)
        p = 1.0 / (1.0 + np.exp(-(t - onset) / width))
        for f in affected:
            values[:, f] += cfg.shift_direction[f] * cfg.shift * noise[f] * p
        info.update({"affected": [FEATURES[f] for f in affected], "onset": float(onset), "rise_width": float(width)})
    return values, info


def generate_sequences(cfg):
    """Build the corpus in memory; returns ``(sequences, manifest dict)``."""
    n_broken = broken_count(cfg.n_coils, cfg.broken_fraction)
    pick = np.random.default_rng(sub_seed(cfg.seed, 0))
    broken_idx = set(pick.choice(cfg.n_coils, size=n_broken, replace=False).tolist())
    width = len(str(cfg.n_coils - 1))
    sequences, coils = [], []
    for i in range(cfg.n_coils):
        values, info = _coil(i, i in broken_idx, cfg)
        coil_id = f"coil-{i:0{width}d}"
        stamps = START_EPOCH + cfg.record_interval * np.arange(cfg.records_per_coil)
        records = tuple(FeatureRecord(float(ts), *row) for ts, row in zip(stamps.tolist(), values.tolist()))
        sequences.append(CoilSequence(coil_id, records, info["label"]))
        coils.append({"coil_id": coil_id, **info})
    manifest = {
        "kind": "corpus",
        "config": cfg.to_dict(),
        "seed_rule": "coil i: SeedSequence([seed, 1, i]); broken selection: SeedSequence([seed, 0])",
        "class_counts": {"normal": cfg.n_coils - n_broken, "broken": n_broken},
        "coils": coils,
    }
    return sequences, manifest


def generate_corpus(cfg, out_dir):
    """Write ``coils.<format>`` and ``corpus_manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    sequences, manifest = generate_sequences(cfg)
    data_path = out_dir / f"coils.{cfg.format}"
    payload = sequences_to_bytes(sequences, cfg.format)
    atomic_write_bytes(data_path, payload)
    manifest["data_file"] = data_path.name
    manifest["data_sha256"] = hashlib.sha256(payload).hexdigest()
    atomic_write_bytes(out_dir / "corpus_manifest.json", (canonical_json(manifest) + "\n").encode("utf-8"))
    return {"data": data_path, "manifest": out_dir / "corpus_manifest.json",
            "class_counts": manifest["class_counts"], "sequences": sequences}
