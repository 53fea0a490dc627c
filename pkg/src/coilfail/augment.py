"""Sigmoid-fade synthesis of breaking-coil windows.

A synthetic window blends a normal window into a broken one along a logistic
curve over the timestep index::

    p[j] = 1 / (1 + exp(-(j - mu) / sigma))
    x[j] = (1 - p[j]) * normal[j] + p[j] * broken[j]

One curve is shared by all four features of a window. ``sigma`` is drawn
uniformly from [0.2, 1] and ``mu`` from [-13.3, 13.3].
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dataio import Window

log = logging.getLogger(__name__)

SIGMA_RANGE = (0.2, 1.0)
MU_RANGE = (-13.3, 13.3)

__all__ = [
    "SIGMA_RANGE",
    "MU_RANGE",
    "FadeParams",
    "sample_fade_params",
    "sigmoid_fade",
    "synthesize_broken",
    "synthetic_count",
    "augment_dataset",
]


@dataclass(frozen=True)
class FadeParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def in_sampling_range(self):
        return (SIGMA_RANGE[0] <= self.sigma <= SIGMA_RANGE[1]
                and MU_RANGE[0] <= self.mu <= MU_RANGE[1])


def sample_fade_params(rng):
    """Draw ``sigma`` ~ U[0.2, 1] and ``mu`` ~ U[-13.3, 13.3]."""
    sigma = rng.uniform(*SIGMA_RANGE)
    mu = rng.uniform(*MU_RANGE)
    return FadeParams(mu=float(mu), sigma=float(sigma))


def sigmoid_fade(j, params):
    """Fade weight at timestep(s) ``j``; scalar in, float out."""
    z = (np.asarray(j, dtype=np.float64) - params.mu) / params.sigma
    # branch-stable logistic
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(p) if p.ndim == 0 else p


def synthesize_broken(normal, broken, params):
    """Blend ``normal`` into ``broken`` with one shared fade curve; label is broken."""
    if normal.values.shape != broken.values.shape:
        raise ValueError(f"window shapes differ: {normal.values.shape} vs {broken.values.shape}")
    p = sigmoid_fade(np.arange(normal.length), params)
    values = (1.0 - p) * normal.values + p * broken.values
    return Window(f"synthetic:{normal.coil_id}+{broken.coil_id}", values, 1,
                  synthetic=True, normalized=normal.normalized and broken.normalized)


def _as_fraction(x):
    return x if isinstance(x, Fraction) else Fraction(str(x))


def synthetic_count(n_total, n_broken, target_fraction):
    """Smallest ``a`` with ``(n_broken + a) / (n_total + a) >= target_fraction``."""
    t = _as_fraction(target_fraction)
    if not 0 <= t < 1:
        raise ValueError(f"target fraction must lie in [0, 1), got {target_fraction}")
    need = (t * n_total - n_broken) / (1 - t)
    return max(0, math.ceil(need))


def augment_dataset(windows, target_broken_fraction, rng):
    """Append synthetic broken windows until the broken share reaches the target.

    Sources are drawn with replacement from the original (non-synthetic)
    windows: one normal and one broken window per synthetic sample, with fresh
    fade parameters each time. The input list is never modified. A target at
    or below the current share is a no-op.
    """
    windows = list(windows)
    originals = [w for w in windows if not w.synthetic]
    normals = [w for w in originals if w.label == 0]
    brokens = [w for w in originals if w.label == 1]
    n_broken = sum(w.label == 1 for w in windows)
    count = synthetic_count(len(windows), n_broken, target_broken_fraction)
    if count == 0:
        if windows and Fraction(n_broken, len(windows)) > _as_fraction(target_broken_fraction):
            log.info("broken share %.4f already above target %s; nothing appended",
                     n_broken / len(windows), target_broken_fraction)
        return windows
    if not brokens or not normals:
        raise ValueError("augmentation needs at least one normal and one broken source window")
    synthetic = []
    for _ in range(count):
        a = normals[rng.integers(len(normals))]
        b = brokens[rng.integers(len(brokens))]
        synthetic.append(synthesize_broken(a, b, sample_fade_params(rng)))
    return windows + synthetic
