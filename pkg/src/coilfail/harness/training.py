"""Mini-batch Adam training with lowest-validation-loss model selection."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..dataio import assert_coil_disjoint, stack_windows
from ..numerics import Adam, NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "TrainingDivergedError", "train", "evaluate_loss", "predict", "predict_windows",
           "best_epoch", "scores_to_labels"]

DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingDivergedError(RuntimeError):
    """The loss or a gradient became NaN/Inf; carries the epoch and batch."""

    def __init__(self, epoch, batch, cause):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {cause}")
        self.epoch = epoch
        self.batch = batch
        self.cause = cause


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Labels are encoded normal=0, broken=1."""

    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 20
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def _batches(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def evaluate_loss(model, X, y, batch_size=256):
    """Mean per-window loss in eval mode, accumulated over fixed-size batches."""
    was_training = model.training
    model.eval()
    total = 0.0
    with no_grad():
        for lo, hi in _batches(len(X), batch_size):
            total += float(model.loss(Tensor(X[lo:hi]), y[lo:hi]).data) * (hi - lo)
    model.train(was_training)
    return total / len(X)


def predict(model, X, batch_size=256):
    """Labels and class scores for a [n, 4, L] batch. Ties go to normal."""
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"expected [n, channels, length] input, got shape {X.shape}")
    was_training = model.training
    model.eval()
    parts = [model.predict_scores(Tensor(X[lo:hi].astype(model.dtype, copy=False)))
             for lo, hi in _batches(len(X), batch_size)]
    model.train(was_training)
    scores = np.concatenate(parts) if parts else np.zeros((0, 2))
    return scores_to_labels(scores), scores


def scores_to_labels(scores):
    """Argmax over (normal, broken) scores; an exact tie is normal."""
    scores = np.asarray(scores)
    return (scores[:, 1] > scores[:, 0]).astype(np.int64)


def predict_windows(model, windows, batch_size=256):
    if not windows:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    X, _, _ = stack_windows(windows, dtype=model.dtype)
    return predict(model, X, batch_size)


def _accuracy(model, X, y):
    labels, _ = predict(model, X)
    return float(np.mean(labels == y))


def train(model, train_windows, val_windows, config=TrainConfig()):
    """Fit ``model`` in place and restore the epoch with the lowest validation loss.

    Returns ``(model, history)``. ``history`` holds one dict per epoch with
    ``train_loss``, ``val_loss`` and ``val_accuracy``; the selected epoch is
    the first one attaining the minimum validation loss. Training stops early
    after ``patience`` epochs without improvement.
    """
    if not train_windows:
        raise ValueError("empty training set")
    if not val_windows:
        raise ValueError("empty validation set")
    real_train = {w.coil_id for w in train_windows if not w.synthetic}
    assert_coil_disjoint({w.coil_id for w in val_windows}, real_train)
    if any(w.synthetic for w in val_windows):
        raise ValueError("validation windows must not be synthetic")

    X, y, _ = stack_windows(train_windows, dtype=model.dtype)
    Xv, yv, _ = stack_windows(val_windows, dtype=model.dtype)
    history = []
    if config.epochs == 0:
        log.warning("epochs=0: returning the initialized model")
        model.eval()
        return model, history

    rng = np.random.default_rng(config.seed)
    model.reseed(int(rng.integers(2**63)))
    opt = Adam(model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))
    best_loss, best_state, stale = np.inf, None, 0
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(X))
        running = 0.0
        for b, (lo, hi) in enumerate(_batches(len(X), config.batch_size)):
            idx = order[lo:hi]
            try:
                loss = model.loss(Tensor(X[idx]), y[idx])
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, b, exc) from exc
            opt.step()
            opt.zero_grad()
            running += float(loss.data) * (hi - lo)
        val_loss = evaluate_loss(model, Xv, yv)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, None, f"validation loss {val_loss}")
        history.append({"epoch": epoch, "train_loss": running / len(X), "val_loss": val_loss,
                        "val_accuracy": _accuracy(model, Xv, yv)})
        if val_loss < best_loss:
            best_loss, best_state, stale = val_loss, model.state_dict(), 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d (best val loss %.6g)", epoch, best_loss)
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def best_epoch(history):
    if not history:
        return None
    return min(history, key=lambda h: (h["val_loss"], h["epoch"]))["epoch"]
