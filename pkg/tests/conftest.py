import numpy as np
import pytest

from bcinverse.forward import SimulatedDevice, SolverSettings
from bcinverse.geometry import DomainSpec, SpeedField

ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_interval():
    return DomainSpec.interval(resolution=200)


@pytest.fixture(scope="session")
def c_const(unit_interval):
    return SpeedField.constant(unit_interval)


@pytest.fixture(scope="session")
def device_const(c_const):
    """Fast device on the unit interval with unit speed and T = 1."""
    return SimulatedDevice(c_const, SolverSettings.from_cfl(c_const, 1.0), method="convolution")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
