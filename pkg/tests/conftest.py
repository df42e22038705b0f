import numpy as np
import pytest

from ilsc.config import SystemConfig, profile


@pytest.fixture
def tiny_cfg() -> SystemConfig:
    """Small wideband system that keeps every stage under a second."""
    return profile("desk", n_bs=32, n_ut=8, m_subcarriers=4, s_rings=4, t_iter=30, q_bs=8,
                   n_rf_bs=2, n_rf_ut=2, n_streams=2)


@pytest.fixture
def desk_cfg() -> SystemConfig:
    return profile("desk")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# One line per acceptance criterion, filled in by tests/test_acceptance.py and
# printed at the end of the run whatever the outcome of each test.
ACCEPTANCE_LINES: dict = {}


def record_criterion(key: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[key] = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[key])
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("abcd")), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
