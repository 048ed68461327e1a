"""First-order optimizers over :class:`ParamVector`."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from metadepth.errors import ConfigurationError
from metadepth.numerics.params import ParamVector


def sgd_step(params: ParamVector, grads: ParamVector, lr: float) -> ParamVector:
    if lr < 0:
        raise ConfigurationError("learning rate must be non-negative")
    params.check_layout(grads)
    return params.with_values(params.values - params.dtype.type(lr) * grads.values)


@dataclass(frozen=True)
class AdamWState:
    first_moment: ParamVector
    second_moment: ParamVector
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def init(cls, params: ParamVector, lr=3e-4, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = params.zeros_like()
        return cls(zeros, zeros.copy(), 0, lr, beta1, beta2, eps, weight_decay)


def adamw_step(state: AdamWState, params: ParamVector, grads: ParamVector):
    """Decoupled weight decay Adam step; returns ``(new_state, new_params)``."""
    params.check_layout(grads)
    params.check_layout(state.first_moment)
    dt = params.dtype.type
    t = state.step_count + 1
    g = grads.values
    m = dt(state.beta1) * state.first_moment.values + dt(1 - state.beta1) * g
    v = dt(state.beta2) * state.second_moment.values + dt(1 - state.beta2) * g * g
    m_hat = m / dt(1 - state.beta1**t)
    v_hat = v / dt(1 - state.beta2**t)
    theta = params.values * dt(1 - state.lr * state.weight_decay)
    theta = theta - dt(state.lr) * m_hat / (np.sqrt(v_hat) + dt(state.eps))
    new_state = replace(
        state,
        first_moment=params.with_values(m),
        second_moment=params.with_values(v),
        step_count=t,
    )
    return new_state, params.with_values(theta)
