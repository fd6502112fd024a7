import numpy as np
import pytest

from clearloc.model import MeasurementSet, NoiseSpec, SourceState, build_covariance, true_fdoa, true_tdoa
from clearloc.sim import preset


def noiseless(source, sensors, sigma2=0.0):
    q = build_covariance(sensors.m_count, NoiseSpec(sigma2))
    return MeasurementSet(true_tdoa(source, sensors), true_fdoa(source, sensors), q)


@pytest.fixture
def s1():
    return preset("scenario1")


@pytest.fixture
def s2():
    return preset("scenario2")


@pytest.fixture
def s4():
    return preset("scenario4")


@pytest.fixture
def s5():
    return preset("scenario5")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(rng, dim, lo=0.0, hi=1000.0):
    return SourceState(rng.uniform(lo, hi, dim), rng.uniform(-50, 50, dim))


ACCEPTANCE_LINES = []


def record_criterion(label, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
