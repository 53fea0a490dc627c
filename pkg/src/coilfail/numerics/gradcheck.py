"""Central finite-difference gradient checking with kink-aware steps."""
from __future__ import annotations

import numpy as np

from .tensor import no_grad


def relative_error(analytic, numeric, floor=1e-7):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps gradients that are exactly zero in theory (a conv bias
    feeding train-mode batch norm) from comparing rounding noise to noise.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(fn, tensor, h=1e-5, indices=None, min_h=1e-8):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor.data``.

    ``indices`` restricts the probe to a list of flat positions; the result
    then has one entry per index.

    Piecewise-linear units (ReLU) put kinks in the loss. When the forward and
    backward one-sided slopes of an entry disagree, a kink lies inside
    ``[x - h, x + h]`` and the central difference averages two slopes, so the
    step for that entry shrinks tenfold until they agree or ``min_h`` is hit.
    """
    flat = tensor.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    out = []
    with no_grad():
        f0 = float(fn().data)
        for i in positions:
            orig = flat[i]
            step = h
            while True:
                flat[i] = orig + step
                fp = float(fn().data)
                flat[i] = orig - step
                fm = float(fn().data)
                flat[i] = orig
                fwd, bwd = (fp - f0) / step, (f0 - fm) / step
                if abs(fwd - bwd) <= 1e-4 * (abs(fwd) + abs(bwd)) + 1e-8 or step / 10 < min_h:
                    break
                step /= 10
            out.append((fp - fm) / (2 * step))
    out = np.asarray(out)
    return out.reshape(tensor.shape) if indices is None else out


def check_gradients(fn, tensors, h=1e-5, max_entries=None, rng=None):
    """Compare tape gradients of scalar ``fn()`` with finite differences.

    Parameters
    ----------
    fn : callable
        Rebuilds the graph and returns a scalar Tensor on every call.
    tensors : dict
        name -> Tensor with ``requires_grad=True``.
    max_entries : int, optional
        Probe at most this many randomly chosen entries per tensor.

    Returns
    -------
    dict
        name -> relative error over the probed entries.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors.values():
        t.grad = None
    fn().backward()
    errors = {}
    for name, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
            num = numeric_grad(fn, t, h, idx)
            ana = analytic.reshape(-1)[idx]
        else:
            num = numeric_grad(fn, t, h)
            ana = analytic
        errors[name] = relative_error(ana, num)
    return errors
