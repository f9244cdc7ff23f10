"""Adam optimizer with bias correction (default hyperparameters)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LayerParams
from .tensor import Tensor

__all__ = ["AdamState", "adam_step"]


def _flatten(params) -> list[Tensor]:
    tensors: list[Tensor] = []
    for p in params:
        if isinstance(p, LayerParams):
            tensors.extend(p.tensors())
        elif isinstance(p, Tensor):
            tensors.append(p)
        else:
            raise TypeError(f"expected LayerParams or Tensor, got {type(p)!r}")
    return tensors


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the step counter."""

    step_count: int
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def init(cls, params, learning_rate: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        tensors = _flatten(params)
        return cls(
            step_count=0,
            first_moment=[np.zeros_like(t.data) for t in tensors],
            second_moment=[np.zeros_like(t.data) for t in tensors],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, state: AdamState) -> AdamState:
    """One in-place Adam update over ``params``; gradients are consumed.

    Every trainable tensor must carry a populated gradient.  After the
    update all gradients are zeroed and ``step_count`` is incremented.
    """
    tensors = _flatten(params)
    if len(tensors) != len(state.first_moment):
        raise ValueError("parameter list does not match optimizer state")
    for t, m in zip(tensors, state.first_moment):
        if m.shape != t.data.shape:
            raise ValueError("optimizer state shapes do not match parameters")
        if t.requires_grad and t.grad is None:
            raise ValueError("missing gradient on a trainable parameter")

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step_count
    bias2 = 1.0 - b2 ** state.step_count
    for t, m, v in zip(tensors, state.first_moment, state.second_moment):
        if not t.requires_grad:
            continue
        g = t.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        t.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        t.grad = None
    return state
