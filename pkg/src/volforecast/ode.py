"""Fixed-step classical Runge-Kutta integration of latent dynamics.

Gradients reach the initial state and the vector-field parameters by
backpropagating through the unrolled stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, ensure_tensor

VectorField = Callable[[Tensor, float], Tensor]


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite latent state after RK4 step {step} (t={t:g})")
        self.step = step
        self.t = t


@dataclass
class TrajectoryState:
    z: Tensor
    t: float


def rk4_step(f: VectorField, z: Tensor, t: float, h: float) -> Tensor:
    k1 = f(z, t)
    k2 = f(z + k1 * (h / 2), t + h / 2)
    k3 = f(z + k2 * (h / 2), t + h / 2)
    k4 = f(z + k3 * h, t + h)
    return z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6)


def integrate_rk4(f: VectorField, z0, t0: float, t1: float, steps: int) -> Tensor:
    """Integrate dz/dt = f(z, t) from t0 to t1 with ``steps`` equal RK4 steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if t1 < t0:
        raise ValueError(f"t1 ({t1}) must be >= t0 ({t0})")
    z = ensure_tensor(z0, z0.dtype if isinstance(z0, np.ndarray) else np.float64)
    if t1 == t0:
        return z
    h = (t1 - t0) / steps
    for i in range(steps):
        t = t0 + i * h
        z = rk4_step(f, z, t, h)
        if not np.all(np.isfinite(z.data)):
            raise NonFiniteStateError(i, t + h)
    return z


def steps_for_interval(duration: float, step_months: float) -> int:
    """Smallest step count whose step size does not exceed ``step_months``."""
    if duration <= 0:
        return 0
    return max(1, math.ceil(duration / step_months - 1e-9))


def ode_consistency_residual(model, source: Tensor | np.ndarray, target: Tensor | np.ndarray, t1: float = 0,
                             horizon: float = 24) -> Tensor:
    """Mean squared gap between the integrated latent and the target's own encoding."""
    if getattr(model, "arch", None) != "odeunet":
        raise TypeError("ode_consistency_residual needs an odeunet model")
    src = source if isinstance(source, Tensor) else model.as_input(source)
    tgt = target if isinstance(target, Tensor) else model.as_input(target)
    _, z0 = model.encode(src)
    z_end = model.evolve(z0, t1, horizon)
    _, z_tgt = model.encode(tgt)
    d = z_end - z_tgt
    return (d * d).mean()
