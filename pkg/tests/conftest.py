import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lvggm.lvmodel import build_cycle_model, marginalize

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_symmetric(rng, p, scale=1.0):
    A = rng.standard_normal((p, p)) * scale
    return 0.5 * (A + A.T)


def random_spd(rng, p, floor=0.5):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + floor * np.eye(p)


def random_orthonormal(rng, p, r):
    Q, _ = np.linalg.qr(rng.standard_normal((p, r)))
    return Q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cycle_model():
    return build_cycle_model(36, 2, seed=2)


@pytest.fixture(scope="session")
def cycle_truth(cycle_model):
    return marginalize(cycle_model)


_criteria: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_criteria):
            terminalreporter.write_line(_criteria[k])
