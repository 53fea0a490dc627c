"""The four sequence classifiers: FCN, ResNet, TCNN and the conv-LSTM.

Every model maps ``[batch, 4, 40]`` feature windows to ``[batch, 2]`` class
scores (normal, broken). FCN, ResNet and TCNN score with a softmax; the LSTM
model ends in two independent sigmoids.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    LSTM,
    Activation,
    AvgPool1d,
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool1d,
    Layer,
    Sequential,
    Transpose,
)
from .numerics import Tensor, as_tensor, no_grad
from .numerics import functional as F

__all__ = [
    "KINDS",
    "DEFAULT_HYPERPARAMS",
    "ModelSpec",
    "Model",
    "ResidualBlock",
    "build_model",
    "build_fcn",
    "build_resnet",
    "build_tcnn",
    "build_lstm",
    "expected_lengths",
    "count_parameters",
]

KINDS = ("fcn", "resnet", "tcnn", "lstm")

DEFAULT_HYPERPARAMS = {
    "fcn": {"filters": [128, 256, 128], "kernels": [8, 5, 3]},
    "resnet": {"filters": 64, "kernels": [8, 5, 3], "blocks": 3},
    "tcnn": {"filters": [6, 12], "kernel": 7, "pool": 3},
    "lstm": {"conv_filters": 64, "conv_kernel": 3, "pool": 3, "pool_stride": 1,
             "dropout": 0.2, "units": 32},
}


class SpecMismatchError(ValueError):
    pass


@dataclass
class ModelSpec:
    """Declarative architecture description.

    ``hyperparams`` starts from :data:`DEFAULT_HYPERPARAMS` for ``kind``;
    unknown keys are rejected.
    """

    kind: str
    input_channels: int = 4
    sequence_length: int = 40
    num_classes: int = 2
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if min(self.input_channels, self.sequence_length, self.num_classes) < 1:
            raise ValueError("input_channels, sequence_length and num_classes must be positive")
        defaults = copy.deepcopy(DEFAULT_HYPERPARAMS[self.kind])
        unknown = set(self.hyperparams) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {self.kind} hyperparameters: {sorted(unknown)}")
        defaults.update(self.hyperparams)
        self.hyperparams = {k: list(v) if isinstance(v, tuple) else v for k, v in defaults.items()}

    def to_dict(self):
        return {
            "kind": self.kind,
            "input_channels": self.input_channels,
            "sequence_length": self.sequence_length,
            "num_classes": self.num_classes,
            "hyperparams": copy.deepcopy(self.hyperparams),
        }

    @classmethod
    def from_dict(cls, d):
        allowed = {"kind", "input_channels", "sequence_length", "num_classes", "hyperparams"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(dict(d)))


class ResidualBlock(Layer):
    """conv-bn-relu, conv-bn-relu, conv-bn, + shortcut, relu."""

    def __init__(self, in_channels, filters, kernels, rng, dtype):
        stages = []
        channels = in_channels
        for i, k in enumerate(kernels):
            stages.append(Conv1d(channels, filters, k, padding="same", rng=rng, dtype=dtype))
            stages.append(BatchNorm1d(filters, dtype=dtype))
            if i < len(kernels) - 1:
                stages.append(Activation("relu"))
            channels = filters
        self.body = Sequential(*stages)
        if in_channels != filters:
            self.shortcut = Sequential(Conv1d(in_channels, filters, 1, padding="same", rng=rng, dtype=dtype),
                                       BatchNorm1d(filters, dtype=dtype))
        else:
            self.shortcut = None

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return (self.body(x) + skip).relu()


class Model:
    """An instantiated architecture: layer graph, parameter registry and mode flag."""

    def __init__(self, spec, network, head, dtype=np.float64):
        self.spec = spec
        self.network = network
        self.head = head
        self.dtype = np.dtype(dtype)

    # ---------------------------------------------------------------- params
    def parameters(self):
        return self.network.parameters()

    def buffers(self):
        return self.network.buffers()

    def state_dict(self):
        """Copies of all parameters and buffers, keyed by stable names."""
        state = {name: p.data.copy() for name, p in self.parameters().items()}
        state.update({name: b.copy() for name, b in self.buffers().items()})
        return state

    def load_state_dict(self, state):
        params = self.parameters()
        buffers = self.buffers()
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise SpecMismatchError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != np.shape(value):
                raise SpecMismatchError(f"{name}: shape {np.shape(value)} != expected {target.shape}")
            target[...] = value

    @property
    def n_parameters(self):
        return count_parameters(self)

    # ------------------------------------------------------------------ mode
    @property
    def training(self):
        return self.network.training

    def train(self, mode=True):
        self.network.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def reseed(self, seed):
        """Reset every dropout RNG from ``seed`` (one child stream per layer)."""
        drops = [m for m in self.network.modules() if isinstance(m, Dropout)]
        children = np.random.SeedSequence(seed).spawn(len(drops)) if drops else []
        for layer, ss in zip(drops, children):
            layer.rng = np.random.default_rng(ss)

    # --------------------------------------------------------------- forward
    def _prepare(self, x):
        x = as_tensor(x)
        c, length = self.spec.input_channels, self.spec.sequence_length
        if x.ndim != 3:
            raise ValueError(f"expected a [batch, {c}, {length}] batch, got shape {x.shape}")
        if x.shape[1:] == (c, length):
            pass
        elif x.shape[1:] == (length, c):
            x = x.transpose(0, 2, 1)
        else:
            raise ValueError(f"expected a [batch, {c}, {length}] batch, got shape {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype)) if not x.requires_grad else x
        return x

    def logits(self, x):
        return self.network(self._prepare(x))

    def forward(self, x):
        z = self.logits(x)
        return F.softmax(z, axis=1) if self.head == "softmax" else z.sigmoid()

    __call__ = forward

    def loss(self, x, y):
        """Cross-entropy for softmax heads, mean binary cross-entropy for sigmoid heads."""
        z = self.logits(x)
        if self.head == "softmax":
            return F.cross_entropy(z, y)
        return F.binary_cross_entropy_with_logits(z, y)

    def predict_scores(self, x):
        with no_grad():
            return self.forward(x).data


# ------------------------------------------------------------------ builders
def _check_kind(spec, kind):
    if spec.kind != kind:
        raise SpecMismatchError(f"spec.kind is {spec.kind!r}, builder needs {kind!r}")


def build_fcn(spec, rng=None, dtype=np.float64):
    _check_kind(spec, "fcn")
    rng = np.random.default_rng(0) if rng is None else rng
    hp = spec.hyperparams
    stages = []
    channels = spec.input_channels
    for filters, k in zip(hp["filters"], hp["kernels"]):
        stages += [Conv1d(channels, filters, k, padding="same", rng=rng, dtype=dtype),
                   BatchNorm1d(filters, dtype=dtype), Activation("relu")]
        channels = filters
    stages += [GlobalAvgPool1d(), Dense(channels, spec.num_classes, rng=rng, dtype=dtype)]
    return Model(spec, Sequential(*stages), "softmax", dtype)


def build_resnet(spec, rng=None, dtype=np.float64):
    _check_kind(spec, "resnet")
    rng = np.random.default_rng(0) if rng is None else rng
    hp = spec.hyperparams
    blocks = []
    channels = spec.input_channels
    for _ in range(hp["blocks"]):
        blocks.append(ResidualBlock(channels, hp["filters"], hp["kernels"], rng, dtype))
        channels = hp["filters"]
    blocks += [GlobalAvgPool1d(), Dense(channels, spec.num_classes, rng=rng, dtype=dtype)]
    return Model(spec, Sequential(*blocks), "softmax", dtype)


def build_tcnn(spec, rng=None, dtype=np.float64):
    _check_kind(spec, "tcnn")
    rng = np.random.default_rng(0) if rng is None else rng
    hp = spec.hyperparams
    stages = []
    channels = spec.input_channels
    for filters in hp["filters"]:
        stages += [Conv1d(channels, filters, hp["kernel"], padding="none", rng=rng, dtype=dtype),
                   Activation("sigmoid")]
        channels = filters
    pool = AvgPool1d(hp["pool"], hp["pool"])
    stages.append(pool)
    length = Sequential(*stages).output_length(spec.sequence_length)
    stages += [Flatten(), Dense(channels * length, spec.num_classes, rng=rng, dtype=dtype)]
    return Model(spec, Sequential(*stages), "softmax", dtype)


def build_lstm(spec, rng=None, dtype=np.float64):
    _check_kind(spec, "lstm")
    rng = np.random.default_rng(0) if rng is None else rng
    hp = spec.hyperparams
    drop_seeds = rng.integers(0, 2**63, size=2)
    stages = []
    channels = spec.input_channels
    for i in range(2):
        stages += [AvgPool1d(hp["pool"], hp["pool_stride"]),
                   Dropout(hp["dropout"], rng=np.random.default_rng(drop_seeds[i])),
                   Conv1d(channels, hp["conv_filters"], hp["conv_kernel"], padding="none", rng=rng, dtype=dtype)]
        channels = hp["conv_filters"]
    stages += [Transpose(),
               LSTM(channels, hp["units"], return_sequences=True, rng=rng, dtype=dtype),
               LSTM(hp["units"], hp["units"], return_sequences=False, rng=rng, dtype=dtype),
               Dense(hp["units"], spec.num_classes, rng=rng, dtype=dtype)]
    return Model(spec, Sequential(*stages), "sigmoid", dtype)


_BUILDERS = {"fcn": build_fcn, "resnet": build_resnet, "tcnn": build_tcnn, "lstm": build_lstm}


def build_model(spec, seed=0, dtype=np.float64):
    """Instantiate ``spec`` with weights drawn from a generator seeded by ``seed``."""
    if isinstance(spec, str):
        spec = ModelSpec(spec)
    return _BUILDERS[spec.kind](spec, np.random.default_rng(seed), dtype)


# ------------------------------------------------------------ shape oracles
def expected_lengths(model_or_network, length):
    """Temporal length after each top-level layer, from layer metadata alone.

    Returns a list aligned with the layers of the network's Sequential;
    ``None`` marks layers after which there is no temporal axis.
    """
    net = model_or_network.network if isinstance(model_or_network, Model) else model_or_network
    out = []
    for layer in net.layers:
        length = None if length is None else layer.output_length(length)
        out.append(length)
    return out


def count_parameters(model):
    return int(sum(p.size for p in model.parameters().values()))
