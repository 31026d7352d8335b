"""Finite-difference verification of recorded-graph gradients."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .tensor import GradCheckError, Parameter, Tensor, backward, no_grad

REL_ERR_FLOOR = 1e-8


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-4,
) -> float:
    """Compare analytic gradients of the scalar ``f()`` against central
    differences, entry by entry.

    Returns the max relative error, `|a - n| / max(|a|, |n|, 1e-8)`.
    Parameters should be double precision; single precision leaves too
    little headroom under the perturbation.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    out = f()
    base = float(out.data)
    if not math.isfinite(base):
        raise GradCheckError(f"function value is not finite: {base}")
    backward(out)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a_full in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a_full.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise GradCheckError("perturbed function value is not finite")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_ERR_FLOOR)
            worst = max(worst, rel)
    return worst
