from __future__ import annotations

from typing import Mapping

from dataclasses import dataclass, field

import numpy as np

from molpretrain.errors import ConfigError, ShapeError
from molpretrain.tensor.tensor import Tensor


@dataclass
class AdamState:
    """First and second moment buffers per parameter name, plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> AdamState:
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one bias-corrected Adam update in place.

    Parameters without a gradient are left untouched (their moments are not
    decayed either); the step counter advances once per call.

    Parameters
    ----------
    params : Mapping[str, Tensor]
        Named parameters, updated in place
    state : AdamState
        Moment buffers, updated in place
    lr : float
        Learning rate, strictly positive
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient of {name} has shape {p.grad.shape}, expected {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype, copy=False)
