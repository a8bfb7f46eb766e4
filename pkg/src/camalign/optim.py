"""Adam with bias correction and per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, grad_of


@dataclass
class AdamState:
    """Moment accumulators for one parameter; shapes mirror the parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected update; returns the new parameter value."""
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError(f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Adam:
    """Optimises named parameter groups, each with its own learning rate.

    groups: list of (params dict name->Tensor, lr).  Parameters are leaf
    tensors whose ``.data`` is updated in place between graph constructions.
    """

    groups: list
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for params, lr in self.groups:
            for name, p in params.items():
                self.states[name] = AdamState(
                    m=np.zeros_like(p.data), v=np.zeros_like(p.data),
                    lr=lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def step(self) -> None:
        for params, _ in self.groups:
            for name, p in params.items():
                p.data = adam_step(self.states[name], p.data, grad_of(p))

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params.values():
                p.grad = None


def parameter_count(params: dict) -> int:
    return sum(p.size for p in params.values())
