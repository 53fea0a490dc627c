"""Differentiable building blocks on top of :class:`Tensor`.

The convolution, pooling and batch-norm ops are fused: their backward passes
are written by hand instead of being composed from primitives, which keeps
the tape short for the 40-step sequences the models see.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _stable_sigmoid, as_tensor, matmul

__all__ = [
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "log_softmax",
    "concat",
    "stack",
    "conv1d",
    "avg_pool1d",
    "batch_norm",
    "dropout",
    "cross_entropy",
    "binary_cross_entropy_with_logits",
]


def relu(x):
    return as_tensor(x).relu()


def sigmoid(x):
    return as_tensor(x).sigmoid()


def tanh(x):
    return as_tensor(x).tanh()


def softmax(x, axis=-1):
    """Softmax with max-subtraction; rows sum to one."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), "softmax", bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), "log_softmax", bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), "concat", bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), "stack", bw)


# ----------------------------------------------------------------- conv/pool
def same_padding(kernel_length):
    """Left/right zero padding that keeps the length under stride 1."""
    total = kernel_length - 1
    return total // 2, total - total // 2


def conv1d(x, weight, bias=None, stride=1, padding="none"):
    """1-D cross-correlation over ``x`` of shape [batch, channels, length].

    ``weight`` is [out_channels, in_channels, kernel]. ``padding`` is
    ``"same"`` (zero padding, output length equals input length when
    ``stride == 1``) or ``"none"``.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.ndim != 3:
        raise ValueError(f"conv1d expects [batch, channels, length], got {x.shape}")
    n, c, length = x.shape
    out_ch, in_ch, k = weight.shape
    if c != in_ch:
        raise ValueError(f"conv1d channel mismatch: input has {c}, weight expects {in_ch}")
    if padding == "same":
        left, right = same_padding(k)
    elif padding == "none":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    padded_len = length + left + right
    if padded_len < k:
        raise ValueError(f"input length {length} shorter than kernel {k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    # im2col rows: one per (sample, output step), columns ordered (tap, channel)
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out_len = win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1)).reshape(n * out_len, k * c)
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 1)).reshape(out_ch, k * c)
    with np.errstate(invalid="ignore", over="ignore"):  # non-finite output is reported by _make
        y = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        y += bias.data
    out = np.ascontiguousarray(y.reshape(n, out_len, out_ch).transpose(0, 2, 1))

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * out_len, out_ch)
        gw = np.ascontiguousarray((g2.T @ cols).reshape(out_ch, k, c).transpose(0, 2, 1))
        gb = g2.sum(axis=0) if bias is not None else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, out_len, k, c)
            gxp = np.zeros((n, padded_len, c), dtype=xp.dtype)
            span = stride * (out_len - 1) + 1
            for j in range(k):
                gxp[:, j:j + span:stride, :] += gcols[:, :, j, :]
            gx = np.ascontiguousarray(gxp[:, left:left + length, :].transpose(0, 2, 1))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, "conv1d", bw)


def avg_pool1d(x, pool_length, stride=None):
    """Local average pooling along the last axis; incomplete windows are dropped."""
    x = as_tensor(x)
    stride = pool_length if stride is None else stride
    if pool_length < 1 or stride < 1:
        raise ValueError("pool_length and stride must be positive")
    length = x.shape[-1]
    if length < pool_length:
        raise ValueError(f"pooling window {pool_length} longer than sequence {length}")
    win = sliding_window_view(x.data, pool_length, axis=-1)[..., ::stride, :]
    out = win.mean(axis=-1)
    out_len = out.shape[-1]

    def bw(g):
        gx = np.zeros_like(x.data)
        share = g / pool_length
        span = stride * (out_len - 1) + 1
        for j in range(pool_length):
            gx[..., j:j + span:stride] += share
        return (gx,)

    return Tensor._make(out, (x,), "avg_pool1d", bw)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalization over [batch, channels, length] (or [batch, channels]).

    Statistics are per channel over the batch and time axes. In training
    mode the running buffers (plain ndarrays) are updated in place with the
    unbiased batch variance.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        m = int(np.prod([x.shape[a] for a in axes]))
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            unbiased = var * m / max(m - 1, 1)
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv_std.reshape(bshape)
                  * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)))
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), "batch_norm", bw)


def dropout(x, rate, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


# --------------------------------------------------------------------- losses
def cross_entropy(logits, labels):
    """Mean categorical cross-entropy of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {labels.shape}")
    onehot = np.eye(logits.shape[1], dtype=logits.dtype)[labels]
    return -(log_softmax(logits, axis=1) * onehot).sum() * (1.0 / logits.shape[0])


def binary_cross_entropy_with_logits(logits, labels):
    """Elementwise BCE against one-hot targets, averaged over batch and outputs."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"bce shape mismatch: logits {logits.shape}, labels {labels.shape}")
    target = np.eye(logits.shape[1], dtype=logits.dtype)[labels]
    z = logits.data
    # log(1 + exp(-|z|)) + max(z, 0) - z*t
    loss = np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))
    scale = 1.0 / z.size

    def bw(g):
        return (g * (_stable_sigmoid(z) - target) * scale,)

    return Tensor._make(np.asarray(loss.sum() * scale, dtype=z.dtype), (logits,), "bce_with_logits", bw)
