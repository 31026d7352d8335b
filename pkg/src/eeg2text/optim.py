"""Adam optimizer over Parameter lists."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class Adam:
    """Bias-corrected adaptive-moment optimizer.

    Holds one first/second moment accumulator per parameter, shaped like the
    parameter, plus a step counter that increases strictly by one per step.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def scale_grads(self, factor: float) -> None:
        for p in self.params:
            p.grad *= factor

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            # rebind rather than mutate: live graphs may alias the old array
            p.data = p.data - update.astype(p.data.dtype, copy=False)
