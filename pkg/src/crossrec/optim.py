"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_update(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step over parallel lists of ndarrays.

    Pure: returns (new_params, new_state) without touching the inputs.
    """
    if not state.m:
        state = AdamState(
            step=state.step,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m1 = beta1 * m + (1.0 - beta1) * g
        v1 = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m1 / (1.0 - beta1**t)
        v_hat = v1 / (1.0 - beta2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m1)
        new_v.append(v1)
    return new_params, AdamState(step=t, m=new_m, v=new_v)


class Adam:
    """In-place Adam over named Tensor parameters (uses each tensor's .grad)."""

    def __init__(self, tensors: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None

    def step(self) -> None:
        grads = [
            t.grad if t.grad is not None else np.zeros_like(t.data) for t in self.tensors
        ]
        new_params, self.state = adam_update(
            [t.data for t in self.tensors],
            grads,
            self.state,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )
        for t, p in zip(self.tensors, new_params):
            t.data = p
