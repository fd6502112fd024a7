import numpy as np
import pytest

from clearloc.baselines import BaselineResult, gauss_newton_ml, ho_xu_tswls
from clearloc.errors import InsufficientSensorsError
from clearloc.estimator import clear_estimate
from clearloc.model import NoiseSpec, SourceState, ml_cost, sample_measurements
from clearloc.sim import random_geometry

from conftest import noiseless, random_state


def test_ho_xu_noiseless(s2, s5):
    for sc in (s2, s5):
        res = ho_xu_tswls(noiseless(sc.source, sc.sensors), sc.sensors)
        assert res.converged
        np.testing.assert_allclose(res.estimate.theta, sc.source.theta, rtol=1e-6, atol=1e-6)


def test_ho_xu_needs_redundant_sensor(s1):
    with pytest.raises(InsufficientSensorsError):
        ho_xu_tswls(noiseless(s1.source, s1.sensors), s1.sensors)


@pytest.mark.parametrize("dim", [2, 3])
def test_ho_xu_noiseless_random(dim):
    rng = np.random.default_rng(40 + dim)
    for _ in range(50):
        source = random_state(rng, dim)
        sensors = random_geometry(rng, dim, int(rng.integers(dim + 2, dim + 5)), source=source)
        res = ho_xu_tswls(noiseless(source, sensors), sensors)
        assert res.converged
        assert np.linalg.norm(res.estimate.theta - source.theta) <= 1e-6 * np.linalg.norm(source.theta)


def test_gn_from_truth_noiseless(s2):
    res = gauss_newton_ml(noiseless(s2.source, s2.sensors, 1.0), s2.sensors, s2.source)
    assert res.converged and res.iterations == 1
    np.testing.assert_array_equal(res.estimate.theta, s2.source.theta)


def test_gn_reaches_local_optimum(s2):
    meas = sample_measurements(np.random.default_rng(17), s2.source, s2.sensors, NoiseSpec(1.0))
    init = SourceState.from_theta(s2.source.theta + np.array([2.0, -1.0, 0.5, 0.3]))
    res = gauss_newton_ml(meas, s2.sensors, init)
    assert res.converged
    clear_cost = ml_cost(meas, clear_estimate(meas, s2.sensors).estimate, s2.sensors)
    assert ml_cost(meas, res.estimate, s2.sensors) <= clear_cost + 1e-6


def test_gn_far_start_is_allowed_to_fail(s1):
    meas = sample_measurements(np.random.default_rng(2), s1.source, s1.sensors, NoiseSpec(1.0))
    res = gauss_newton_ml(meas, s1.sensors, SourceState([-5000.0, 8000.0], [300.0, -200.0]))
    assert isinstance(res, BaselineResult)
    if not res.converged:
        assert res.failure_reason


def test_gn_cost_never_increases(s2):
    meas = sample_measurements(np.random.default_rng(21), s2.source, s2.sensors, NoiseSpec(10.0))
    init = SourceState.from_theta(s2.source.theta + np.array([40.0, -30.0, 5.0, 5.0]))
    costs = [ml_cost(meas, init, s2.sensors)]
    for k in range(1, 8):
        res = gauss_newton_ml(meas, s2.sensors, init, max_iter=k)
        costs.append(ml_cost(meas, res.estimate, s2.sensors))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(costs, costs[1:]))


def test_converged_result_needs_estimate():
    with pytest.raises(ValueError):
        BaselineResult(None, True)
