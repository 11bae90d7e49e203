"""Endpoint error of the RK4 integrator on z' = -0.1 z over [0, 24] as the step count doubles."""

import math

import numpy as np

from volforecast.autodiff import Tensor
from volforecast.ode import integrate_rk4


def main():
    exact = math.exp(-2.4)
    prev = None
    print(f"{'steps':>6} {'h':>6} {'error':>12} {'ratio':>8}")
    for n in (2, 4, 8, 16, 32, 64, 128):
        z = integrate_rk4(lambda z, t: z * -0.1, Tensor(np.array([1.0]), dtype=np.float64), 0.0, 24.0, n)
        err = abs(float(z.data[0]) - exact)
        ratio = "" if prev is None else f"{prev / err:8.4f}"
        print(f"{n:6d} {24 / n:6.3f} {err:12.4e} {ratio}")
        prev = err
    # the stability polynomial 1 + x + x^2/2 + x^3/6 + x^4/24 at x = -0.1 h gives the same numbers,
    # so the ratio only settles to 16 once h is small


if __name__ == "__main__":
    main()
