"""scikit-learn compatible wrappers around the window classifiers.

``CoilFailureClassifier`` takes raw (unnormalized) windows ``X`` of shape
[n, 4, 40] or [n, 40, 4], integer labels ``y`` (0 normal, 1 broken) and
optional ``groups`` naming the coil each window came from. Validation data
is carved out at coil granularity so no coil feeds both sides.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataio import FEATURES, WINDOW_LENGTH, Window, stratified_split
from .harness.training import TrainConfig, predict, scores_to_labels, train
from .models import KINDS, ModelSpec, build_model
from .seeding import sub_seed

__all__ = ["check_windows", "check_labels", "check_groups", "ZScoreNormalizer", "CoilFailureClassifier"]


def check_windows(X, channels=len(FEATURES), length=WINDOW_LENGTH):
    """Return ``X`` as a finite float array of shape [n, channels, length]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-D array of windows, got shape {X.shape}")
    if X.shape[1:] == (length, channels) and X.shape[1:] != (channels, length):
        X = X.transpose(0, 2, 1)
    if X.shape[1:] != (channels, length):
        raise ValueError(f"expected windows of shape [{channels}, {length}], got {X.shape[1:]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows contain NaN or infinite values")
    return X


def check_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (broken)")
    return y.astype(np.int64)


def check_groups(groups, y):
    """Coil id per window (defaults to one coil per window); each coil must carry one label."""
    if groups is None:
        return np.array([f"w{i}" for i in range(len(y))], dtype=object)
    groups = np.asarray(groups, dtype=object)
    if groups.shape != y.shape:
        raise ValueError(f"expected {len(y)} group ids, got shape {groups.shape}")
    seen = {}
    for g, label in zip(groups, y):
        if seen.setdefault(g, label) != label:
            raise ValueError(f"coil {g!r} carries both labels")
    return groups


class ZScoreNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring with population statistics over all timesteps."""

    def fit(self, X, y=None):
        X = check_windows(X)
        self.mean_ = X.mean(axis=(0, 2))
        self.scale_ = X.std(axis=(0, 2))
        if np.any(self.scale_ == 0):
            bad = [FEATURES[i] for i in np.flatnonzero(self.scale_ == 0)]
            raise ValueError(f"zero-variance feature(s): {bad}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_windows(X)
        return (X - self.mean_[:, None]) / self.scale_[:, None]

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_windows(X)
        return X * self.scale_[:, None] + self.mean_[:, None]


class CoilFailureClassifier(ClassifierMixin, BaseEstimator):
    """Train one of ``fcn``, ``resnet``, ``tcnn`` or ``lstm`` on coil windows."""

    def __init__(self, kind="lstm", epochs=100, batch_size=32, learning_rate=1e-3, patience=20,
                 validation_fraction=0.3, dtype="float32", random_state=0):
        self.kind = kind
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.dtype = dtype
        self.random_state = random_state

    def _config(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           patience=self.patience, seed=sub_seed(self.random_state, 103, 0), dtype=self.dtype)

    def fit(self, X, y, groups=None):
        config = self._config()
        X = check_windows(X)
        y = check_labels(y, len(X))
        groups = check_groups(groups, y)
        labels = {g: int(label) for g, label in zip(groups, y)}
        train_coils, val_coils = stratified_split(labels, 1 - self.validation_fraction,
                                                  seed=sub_seed(self.random_state, 101, 0))
        train_mask = np.isin(groups, train_coils)
        self.normalizer_ = ZScoreNormalizer().fit(X[train_mask])
        Z = self.normalizer_.transform(X)

        def windows(mask):
            return [Window(g, z, int(label), normalized=True) for g, z, label in zip(groups[mask], Z[mask], y[mask])]

        model = build_model(ModelSpec(self.kind), seed=sub_seed(self.random_state, 102, 0), dtype=config.np_dtype)
        self.model_, self.history_ = train(model, windows(train_mask), windows(~train_mask), config)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _scores(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, self.normalizer_.transform(X))[1]

    def predict_proba(self, X):
        """Class scores rescaled to sum to one per window."""
        scores = self._scores(X).astype(np.float64)
        return scores / scores.sum(axis=1, keepdims=True)

    def predict(self, X):
        return scores_to_labels(self._scores(X))
