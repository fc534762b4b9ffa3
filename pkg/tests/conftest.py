import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gistnet.data import SyntheticConfig, generate_split
from gistnet.tensor import SeededRng

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return SeededRng(1234, 7)


@pytest.fixture(scope="session")
def tiny_scenes():
    """Small synthetic split shared by data, model and CLI tests."""
    cfg = SyntheticConfig(n_train=40, n_test=24, seed=5)
    return cfg, generate_split(cfg, 0, 40)


def allclose(a, b, tol=1e-12):
    return np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))) <= tol


ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
