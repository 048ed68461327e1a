"""Central finite-difference gradients, used as a test oracle."""

from __future__ import annotations

import numpy as np

from metadepth.numerics.params import ParamVector


def finite_diff_grad(loss_fn, params: ParamVector, eps: float = 1e-5) -> ParamVector:
    """Return ``(loss(p + eps e_i) - loss(p - eps e_i)) / (2 eps)`` for every coordinate.

    ``loss_fn`` receives a ParamVector and must return a float. Cost is two
    loss evaluations per parameter.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = params.values
    out = np.zeros(base.size, dtype=np.float64)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] += eps
        minus[i] -= eps
        out[i] = (float(loss_fn(params.with_values(plus))) - float(loss_fn(params.with_values(minus)))) / (2 * eps)
    return params.with_values(out.astype(base.dtype))


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))
