import warnings

import numpy as np
import pytest

from dpgeo import grid as G
from dpgeo import warped as W

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def acceptance_line(request):
    """Record ``[PASS|FAIL] criterion N: ...`` for the terminal summary."""
    def record(number: int, ok: bool, text: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
        print(line)
        request.config.stash[ACCEPTANCE_KEY].append(line)
    return record


@pytest.fixture(autouse=True)
def _quiet_dimension_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*does not exceed the dimension.*")
        yield


def random_profiles(rng) -> W.ProfilePair:
    """Smooth positive profiles with closed-form derivatives."""
    a, b = rng.uniform(0.05, 0.2), rng.uniform(0.5, 2.0)
    c, d = rng.uniform(0.05, 0.3), rng.uniform(0.5, 2.0)
    f = W.Profile(lambda r: r * (1 + a * np.sin(b * r)),
                  lambda r: 1 + a * np.sin(b * r) + a * b * r * np.cos(b * r),
                  lambda r: 2 * a * b * np.cos(b * r) - a * b * b * r * np.sin(b * r))
    phi = W.Profile(lambda r: 1 + c * np.cos(d * r),
                    lambda r: -c * d * np.sin(d * r),
                    lambda r: -c * d * d * np.cos(d * r))
    return W.ProfilePair(f, phi)


def smooth_metric(amp: float):
    """Smooth non-diagonal positive definite planar metric."""
    def metric(pts):
        x, y = pts[..., 0], pts[..., 1]
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1 + amp * np.sin(3 * x)
        out[..., 1, 1] = 1 + amp * np.cos(2 * y)
        out[..., 0, 1] = out[..., 1, 0] = 0.3 * amp * np.sin(x + y)
        return out
    return metric


@pytest.fixture
def small_flat():
    return G.flat_grid((8, 8))
