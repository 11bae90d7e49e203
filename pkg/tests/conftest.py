import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_volume(rng, shape=(16, 16, 16), n=4):
    """Random sum of wide Gaussian bumps in [0, 1]."""
    grid = np.stack(np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij"), axis=-1)
    out = np.zeros(shape)
    for _ in range(n):
        c = rng.uniform(0, 1, 3) * np.array(shape)
        r = rng.uniform(2.0, 4.0)
        out += rng.uniform(0.3, 0.7) * np.exp(-((grid - c) ** 2).sum(-1) / (2 * r * r))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
