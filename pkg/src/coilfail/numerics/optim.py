"""Adam with bias-corrected moment estimates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("learning rate must be positive")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params, state):
    """Apply one Adam update in place to ``params`` (name -> Tensor) and zero their grads.

    Every parameter must carry a populated ``grad``; the moment buffers in
    ``state`` are created lazily and must match the parameter shapes.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if p.grad.shape != p.data.shape:
            raise ValueError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape} for {name!r}")
        if name in state.m and state.m[name].shape != p.data.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {state.m[name].shape}, parameter {p.data.shape}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None
    return params, state


class Adam:
    """Thin object wrapper: ``Adam(params).step()`` after each backward pass."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(alpha=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
