"""Neural-network layers for 1-D sequence models.

Layers are small stateful objects holding their parameters as
:class:`~coilfail.numerics.Tensor` leaves. Inputs to convolutional layers are
laid out ``[batch, channels, length]``; the LSTM takes ``[batch, length,
features]``.
"""
from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor, as_tensor
from .numerics import functional as F

__all__ = [
    "Layer",
    "Conv1d",
    "BatchNorm1d",
    "AvgPool1d",
    "GlobalAvgPool1d",
    "Dropout",
    "Dense",
    "LSTM",
    "Activation",
    "Flatten",
    "Transpose",
    "Sequential",
    "lstm_cell_step",
]


class Layer:
    """Base class: named parameters, non-trainable buffers and a train/eval flag."""

    training = True

    def parameters(self, prefix=""):
        """Ordered ``name -> Tensor`` of trainable parameters, children included."""
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Layer):
                out.update(value.parameters(prefix + name + "."))
            elif isinstance(value, list) and value and all(isinstance(v, Layer) for v in value):
                for i, child in enumerate(value):
                    out.update(child.parameters(f"{prefix}{name}.{i}."))
        return out

    def buffers(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            if name.startswith("running_") and isinstance(value, np.ndarray):
                out[prefix + name] = value
            elif isinstance(value, Layer):
                out.update(value.buffers(prefix + name + "."))
            elif isinstance(value, list) and value and all(isinstance(v, Layer) for v in value):
                for i, child in enumerate(value):
                    out.update(child.buffers(f"{prefix}{name}.{i}."))
        return out

    def children(self):
        for value in vars(self).values():
            if isinstance(value, Layer):
                yield value
            elif isinstance(value, list):
                yield from (v for v in value if isinstance(v, Layer))

    def modules(self):
        yield self
        for child in self.children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, x):
        return self.forward(x)

    def output_length(self, length):
        """Temporal length after this layer (identity unless overridden)."""
        return length


def _uniform(rng, bound, shape, dtype):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_length, stride=1, padding="same",
                 rng=None, dtype=np.float64):
        if min(in_channels, out_channels, kernel_length, stride) < 1:
            raise ValueError("conv sizes must be positive")
        if padding not in ("same", "none"):
            raise ValueError(f"padding must be 'same' or 'none', got {padding!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_length = kernel_length
        self.stride = stride
        self.padding = padding
        bound = 1.0 / math.sqrt(in_channels * kernel_length)
        self.weight = _uniform(rng, bound, (out_channels, in_channels, kernel_length), dtype)
        self.bias = _uniform(rng, bound, (out_channels,), dtype)

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def output_length(self, length):
        if self.padding == "same":
            return (length - 1) // self.stride + 1
        return (length - self.kernel_length) // self.stride + 1


class BatchNorm1d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"batchnorm expects {self.channels} channels, got {x.shape[1]}")
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class AvgPool1d(Layer):
    def __init__(self, pool_length, stride=None):
        self.pool_length = pool_length
        self.stride = pool_length if stride is None else stride

    def forward(self, x):
        return F.avg_pool1d(x, self.pool_length, self.stride)

    def output_length(self, length):
        return (length - self.pool_length) // self.stride + 1


class GlobalAvgPool1d(Layer):
    """Mean over the temporal axis: [batch, channels, length] -> [batch, channels]."""

    def forward(self, x):
        if x.shape[-1] < 1:
            raise ValueError("global average pooling over an empty temporal axis")
        return x.mean(axis=-1)

    def output_length(self, length):
        return None


class Dropout(Layer):
    def __init__(self, rate, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng() if rng is None else rng

    def forward(self, x):
        return F.dropout(x, self.rate, self.training, self.rng)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / math.sqrt(in_features)
        self.weight = _uniform(rng, bound, (in_features, out_features), dtype)
        self.bias = _uniform(rng, bound, (out_features,), dtype)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"dense expects [batch, {self.in_features}], got {x.shape}")
        return x @ self.weight + self.bias

    def output_length(self, length):
        return None


class Activation(Layer):
    def __init__(self, name):
        if name not in ("relu", "sigmoid", "tanh"):
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x):
        return getattr(as_tensor(x), self.name)()


class Flatten(Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def output_length(self, length):
        return None


class Transpose(Layer):
    """Swap channel and time axes: [batch, channels, length] <-> [batch, length, channels]."""

    def forward(self, x):
        return x.transpose(0, 2, 1)


def lstm_cell_step(x_proj, h, c, recurrent, units):
    """One LSTM step given the precomputed input projection ``x W + b``.

    Gate order in the packed projection is input, forget, candidate, output.
    """
    z = x_proj + h @ recurrent
    i = z[:, 0 * units:1 * units].sigmoid()
    f = z[:, 1 * units:2 * units].sigmoid()
    g = z[:, 2 * units:3 * units].tanh()
    o = z[:, 3 * units:4 * units].sigmoid()
    c = f * c + i * g
    h = o * c.tanh()
    return h, c


class LSTM(Layer):
    """Single LSTM layer over [batch, length, features] with zero initial state."""

    def __init__(self, input_size, units, return_sequences=False, forget_bias=1.0,
                 rng=None, dtype=np.float64):
        rng = np.random.default_rng() if rng is None else rng
        self.input_size = input_size
        self.units = units
        self.return_sequences = return_sequences
        bound = 1.0 / math.sqrt(units)
        self.kernel = _uniform(rng, bound, (input_size, 4 * units), dtype)
        self.recurrent = _uniform(rng, bound, (units, 4 * units), dtype)
        bias = np.zeros(4 * units, dtype=dtype)
        bias[units:2 * units] = forget_bias
        self.bias = Tensor(bias, requires_grad=True)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ValueError(f"LSTM expects [batch, length, {self.input_size}], got {x.shape}")
        n, length, _ = x.shape
        if length < 1:
            raise ValueError("LSTM input has zero timesteps")
        proj = x @ self.kernel + self.bias  # [n, length, 4u]
        h = Tensor(np.zeros((n, self.units), dtype=x.dtype))
        c = Tensor(np.zeros((n, self.units), dtype=x.dtype))
        outputs = []
        for t in range(length):
            h, c = lstm_cell_step(proj[:, t, :], h, c, self.recurrent, self.units)
            if self.return_sequences:
                outputs.append(h)
        if self.return_sequences:
            return F.stack(outputs, axis=1)
        return h

    def output_length(self, length):
        return length if self.return_sequences else None


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def output_length(self, length):
        for layer in self.layers:
            if length is None:
                break
            length = layer.output_length(length)
        return length
