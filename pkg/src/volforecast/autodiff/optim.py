"""Adam with decoupled weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .nn import Parameter


class MissingGradientError(RuntimeError):
    pass


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
    allow_missing: bool = False,
) -> None:
    """One update: ``w -= lr*wd*w`` then the bias-corrected Adam step.

    A parameter whose ``grad`` is None raises MissingGradientError unless
    ``allow_missing`` is set, in which case it is skipped.
    """
    for p in params:
        if not p.requires_grad:
            continue
        if p.grad is None:
            if allow_missing:
                continue
            raise MissingGradientError(f"parameter {p.name or '<unnamed>'} has no gradient")
        g = p.grad.astype(p.data.dtype, copy=False)
        p.step_count += 1
        t = p.step_count
        if weight_decay:
            p.data = p.data - (lr * weight_decay) * p.data
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 1e-5):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, allow_missing=True)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
