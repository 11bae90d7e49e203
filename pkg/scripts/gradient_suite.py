"""Print the finite-difference relative error of every differentiable op."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from gradcases import CASES, run_case  # noqa: E402


def main():
    t0 = time.perf_counter()
    worst = 0.0
    for name in CASES:
        err = run_case(name)
        worst = max(worst, err)
        print(f"{name:18s} {err:.3e}")
    print(f"max {worst:.3e} in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
