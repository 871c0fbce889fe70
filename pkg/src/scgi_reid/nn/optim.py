"""Adam optimizer operating on named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment estimates plus the step counter shared by one parameter group."""

    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Standard bias-corrected Adam over a fixed set of named parameters."""

    def __init__(self, named_params: dict[str, Tensor], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, betas=betas, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one Adam update; every parameter must carry a gradient."""
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter '{name}' has no gradient")
        adam_step(self.params, self.state, lr=lr)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float | None = None) -> None:
    """One in-place Adam update on ``params`` given their populated ``grad``s."""
    if lr is not None:
        state.lr = float(lr)
    b1, b2 = state.betas
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ContractError(f"parameter '{name}' has no gradient")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
