"""Central finite-difference gradient oracle.

Only the forward pass of ``fn`` is used, so the check is independent of the
backward rules it verifies.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float) -> np.ndarray:
    grad = np.zeros(t.data.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data.sum())
            flat[i] = orig - h
            down = float(fn().data.sum())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the largest numeric gradient magnitude."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float | None = None) -> float:
    """Compare backward() against central differences; returns the worst relative error.

    ``fn`` takes no arguments and recomputes a scalar from ``inputs`` (which it
    closes over), so inputs are perturbed in place.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn()
    out.backward()
    worst = 0.0
    for t in inputs:
        step = h if h is not None else (1e-5 if t.data.dtype == np.float64 else 1e-3)
        num = numerical_grad(fn, t, step)
        ana = np.zeros_like(num) if t.grad is None else t.grad.astype(np.float64)
        worst = max(worst, relative_error(ana, num))
    return worst
