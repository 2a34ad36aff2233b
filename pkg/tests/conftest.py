import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, derandomize=True, database=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_activities(rng, T, K, min_run=3):
    """(T, K) activities with an always-on noise column and runs of speech."""
    d = np.zeros((T, K), dtype=np.uint8)
    d[:, 0] = 1
    for k in range(1, K):
        t = int(rng.integers(0, max(1, T // 3)))
        while t < T:
            length = int(rng.integers(min_run, max(min_run + 1, T // 2)))
            d[t:t + length, k] = 1
            t += length + int(rng.integers(1, max(2, T // 4)))
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
