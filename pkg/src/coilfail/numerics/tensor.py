"""Dense tensors with a reverse-mode gradient tape.

Each differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure accumulating gradients into them. ``Tensor.backward``
walks the graph in reverse topological order and then releases it, so a
second call on the same loss raises :class:`GraphConsumedError`.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphConsumedError",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
]


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a forward or backward computation."""

    def __init__(self, op, phase="forward"):
        super().__init__(f"non-finite value produced by {op!r} during {phase} pass")
        self.op = op
        self.phase = phase


class GraphConsumedError(RuntimeError):
    pass


_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(arr, op, phase="forward"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op, phase)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float64))


class Tensor:
    """N-dimensional real array that can take part in the gradient tape.

    Parameters
    ----------
    data : array_like
        Values. Floating dtypes are kept as given (float32 or float64);
        anything else is converted to float64.
    requires_grad : bool
        Leaf tensors with ``requires_grad=True`` receive ``.grad`` after
        :meth:`backward`.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    # ------------------------------------------------------------------- graph
    @classmethod
    def _make(cls, data, parents, op, backward):
        _check_finite(data, op)
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out = cls(data, requires_grad=track, _parents=parents if track else (), _op=op)
        if track:
            out._backward = backward
        return out

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Propagate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only scalar tensors may start a backward pass unless an explicit
        upstream ``grad`` is given. The tape is freed afterwards.
        """
        if self._consumed:
            raise GraphConsumedError("backward already called on this graph; rebuild it with a new forward pass")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor that requires grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                _check_finite(pg, node._op, "backward")
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._consumed = True

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = _lift(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), "add", bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), "sub", bw)

    def __rsub__(self, other):
        return _lift(other, self) - self

    def __mul__(self, other):
        other = _lift(other, self)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), "mul", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self)
        a, b = self, other

        def bw(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), "div", bw)

    def __rtruediv__(self, other):
        return _lift(other, self) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self

        def bw(g):
            return (g * exponent * a.data ** (exponent - 1),)

        return Tensor._make(a.data ** exponent, (a,), "pow", bw)

    def __matmul__(self, other):
        return matmul(self, other)

    # ------------------------------------------------------------ elementwise
    def exp(self):
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return Tensor._make(out, (self,), "exp", lambda g: (g * out,))

    def log(self):
        a = self
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.log(a.data)
        return Tensor._make(out, (a,), "log", lambda g: (g / a.data,))

    def relu(self):
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), "relu", lambda g: (g * mask,))

    def sigmoid(self):
        out = _stable_sigmoid(self.data)
        return Tensor._make(out, (self,), "sigmoid", lambda g: (g * out * (1.0 - out),))

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    # ------------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum", bw)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[ax] for ax in axes]))
        if n == 0:
            raise ValueError("mean over an empty axis")
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---------------------------------------------------------------- shaping
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(np.transpose(self.data, axes), (self,), "transpose",
                            lambda g: (np.transpose(g, inv),))

    def __getitem__(self, index):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            if _needs_add_at(index):
                np.add.at(full, index, g)
            else:
                full[index] = g
            return (full,)

        return Tensor._make(a.data[index], (a,), "getitem", bw)


def _needs_add_at(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _lift(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading batch axes."""
    a = as_tensor(a)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), "matmul", bw)
