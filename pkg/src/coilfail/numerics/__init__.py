"""Tensor arithmetic, reverse-mode differentiation and the Adam optimizer."""
from . import functional
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam, AdamState, adam_step
from .tensor import GraphConsumedError, NonFiniteError, Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "NonFiniteError",
    "GraphConsumedError",
    "Adam",
    "AdamState",
    "adam_step",
    "check_gradients",
    "numeric_grad",
    "relative_error",
    "functional",
]
