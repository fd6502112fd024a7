import numpy as np
import pytest

from clearloc.baselines import gauss_newton_ml
from clearloc.errors import InsufficientSensorsError
from clearloc.estimator import (
    ClearOptions,
    NuisancePair,
    clear_estimate,
    effective_covariance,
    select_candidate,
    stage1_affine,
    stage1_iterate_weight,
    stage1_solve,
    stage1_system,
    stage2_refine,
)
from clearloc.model import (
    MeasurementSet,
    NoiseSpec,
    SensorArray,
    SourceState,
    build_covariance,
    ml_cost,
    sample_measurements,
    true_fdoa,
    true_tdoa,
)
from clearloc.sim import random_geometry

from conftest import noiseless, random_state

# noiseless Scenario-1 source placed so the quartic has two admissible roots
TWO_ROOT_SOURCE = SourceState([-1500.0, 500.0], [20.0, 10.0])


def assert_state_close(est, truth, tol=1e-6):
    np.testing.assert_allclose(est.position, truth.position, rtol=tol, atol=tol)
    np.testing.assert_allclose(est.velocity, truth.velocity, rtol=tol, atol=tol)


def test_stage1_system_identity_at_truth(s1):
    meas = noiseless(s1.source, s1.sensors)
    sys = stage1_system(meas, s1.sensors)
    s0 = s1.sensors.positions[0]
    u, ud = s1.source.position, s1.source.velocity
    v = np.linalg.norm(u - s0)
    vdot = (u - s0) @ (ud - s1.sensors.velocities[0]) / v
    resid = sys.h1 - sys.G1 @ s1.source.theta + sys.D1 @ np.array([v, vdot])
    assert np.max(np.abs(resid)) < 1e-9 * np.max(np.abs(sys.h1))
    # hand-computed first row: r1^2 + |s0|^2 - |s1|^2 and G row 2 (s0 - s1)
    r1 = 1000 - np.sqrt(145000)
    assert sys.h1[0] == pytest.approx(r1**2 + 5000 - 2e6, rel=1e-12)
    np.testing.assert_allclose(sys.G1[0, :2], [-1900, -1900])
    np.testing.assert_allclose(sys.G1[2, :2], [60, 80])


def test_stage1_block_structure(s2):
    sys = stage1_system(noiseless(s2.source, s2.sensors, 1.0), s2.sensors)
    m = 3
    np.testing.assert_array_equal(sys.G1[:m, 2:], 0)
    np.testing.assert_array_equal(sys.G1[m:, 2:], sys.G1[:m, :2])
    np.testing.assert_array_equal(sys.D1[:m, 1], 0)
    np.testing.assert_array_equal(sys.D1[m:, 1], sys.D1[:m, 0])
    np.testing.assert_allclose(sys.W1, sys.W1.T)
    assert np.all(np.linalg.eigvalsh(sys.W1) > 0)


def test_stage1_equal_velocities_zero_gdot():
    sensors = SensorArray([[0, 0], [500, 0], [0, 700]], np.tile([5.0, -3.0], (3, 1)))
    sys = stage1_system(noiseless(SourceState([300, 200], [1, 1]), sensors), sensors)
    np.testing.assert_array_equal(sys.G1[2:, :2], 0)


def test_sign_convention_identity(s1, s4):
    for sc in (s1, s4):
        meas = noiseless(sc.source, sc.sensors)
        b, A, _, _ = stage1_affine(stage1_system(meas, sc.sensors), sc.sensors)
        n = sc.dim
        u, ud = sc.source.position, sc.source.velocity
        s0, sd0 = sc.sensors.positions[0], sc.sensors.velocities[0]
        v = np.linalg.norm(u - s0)
        phi = np.array([v, (u - s0) @ (ud - sd0) / v])
        assert np.linalg.norm(b[:n] - A[:n] @ phi - (u - s0)) < 1e-9 * v
        assert np.linalg.norm(b[n:] - A[n:] @ phi - (ud - sd0)) < 1e-9 * v


def test_stage1_solve_noiseless_scenarios(s1, s4):
    for sc in (s1, s4):
        meas = noiseless(sc.source, sc.sensors)
        cands = stage1_solve(stage1_system(meas, sc.sensors), meas, sc.sensors)
        best = select_candidate(cands, meas.with_covariance(effective_covariance(meas)), sc.sensors)
        assert_state_close(best, sc.source)
    meas = noiseless(s1.source, s1.sensors)
    cands = stage1_solve(stage1_system(meas, s1.sensors), meas, s1.sensors)
    assert len(cands) == 1


def test_two_root_geometry(s1):
    meas = noiseless(TWO_ROOT_SOURCE, s1.sensors)
    cands = stage1_solve(stage1_system(meas, s1.sensors), meas, s1.sensors)
    assert len(cands) == 2
    assert any(np.allclose(st.theta, TWO_ROOT_SOURCE.theta, atol=1e-6) for _, st in cands)
    res = clear_estimate(meas, s1.sensors)
    assert all(np.isfinite(c.cost) for c in res.candidates)
    # With M = N both roots reproduce the data exactly, so the costs tie and
    # the smaller range is kept.
    assert all(c.cost < 1e-12 for c in res.candidates)
    assert res.candidates[0].nuisance.v == min(c.nuisance.v for c in res.candidates)


def test_iterations_one_matches_plain_solve(s2):
    meas = sample_measurements(np.random.default_rng(4), s2.source, s2.sensors, NoiseSpec(1.0))
    sys, cands = stage1_iterate_weight(meas, s2.sensors, iterations=1)
    plain = stage1_solve(stage1_system(meas, s2.sensors), meas, s2.sensors)
    np.testing.assert_array_equal(sys.B1, np.eye(6))
    assert len(cands) == len(plain)
    for (n1, st1), (n2, st2) in zip(cands, plain):
        np.testing.assert_array_equal(st1.theta, st2.theta)


def test_reweighting_fixed_point_at_truth(s2):
    meas = noiseless(s2.source, s2.sensors)
    _, one = stage1_iterate_weight(meas, s2.sensors, 1)
    _, two = stage1_iterate_weight(meas, s2.sensors, 2)
    np.testing.assert_allclose(one[0][1].theta, two[0][1].theta, atol=1e-9)


def _stage1_errors(sc, sigma2, trials, iters):
    out = []
    for t in range(trials):
        meas = sample_measurements(np.random.default_rng([7, t]), sc.source, sc.sensors, NoiseSpec(sigma2))
        est = clear_estimate(meas, sc.sensors, ClearOptions(iters, refine=False)).stage1_estimate
        out.append(np.linalg.norm(est.position - sc.source.position))
    return np.array(out)


def test_reweighting_scenario1(s1):
    e1 = _stage1_errors(s1, 100.0, 500, 1)
    e2 = _stage1_errors(s1, 100.0, 500, 2)
    # M = N: the Stage-1 system is square, so the weight cannot move the
    # solution and the two passes agree to rounding.
    assert np.median(e2) <= np.median(e1) * (1 + 1e-9)
    assert np.sqrt(np.mean(e2**2)) <= np.sqrt(np.mean(e1**2)) * (1 + 1e-9)


def test_reweighting_helps_with_redundant_sensors(s2):
    e1 = _stage1_errors(s2, 100.0, 500, 1)
    e2 = _stage1_errors(s2, 100.0, 500, 2)
    assert np.median(e2) < np.median(e1)
    assert np.sqrt(np.mean(e2**2)) < np.sqrt(np.mean(e1**2))


def test_select_candidate_single_and_truth(s1):
    meas = noiseless(s1.source, s1.sensors, 1.0)
    only = [(NuisancePair(1.0, 0.0), s1.source)]
    assert select_candidate(only, meas, s1.sensors) is s1.source
    other = SourceState([10.0, 700.0], [0.0, 0.0])
    pair = [(NuisancePair(5.0, 0.0), other), (NuisancePair(9.0, 0.0), s1.source)]
    assert select_candidate(pair, meas, s1.sensors) is s1.source


def test_selection_matches_local_ml_basin(s1):
    # oracle: Gauss-Newton from every candidate gives the local ML minimum of
    # each basin; the selected candidate must sit in a basin of minimal cost
    spec = NoiseSpec(1e-2)
    agree = total = 0
    for t in range(500):
        meas = sample_measurements(np.random.default_rng([99, t]), TWO_ROOT_SOURCE, s1.sensors, spec)
        res = clear_estimate(meas, s1.sensors)
        if len(res.candidates) < 2:
            continue
        total += 1
        basin = {}
        for c in res.candidates:
            gn = gauss_newton_ml(meas, s1.sensors, c.state)
            if gn.converged:
                basin[c.nuisance.v] = ml_cost(meas, gn.estimate, s1.sensors)
        best = min(basin.values())
        chosen = basin.get(res.candidates[0].nuisance.v, np.inf)
        if chosen <= best + 1e-12 * max(best, 1.0):
            agree += 1
    assert total > 0
    assert agree >= 0.99 * total


def test_stage2_zero_at_truth(s2):
    meas = noiseless(s2.source, s2.sensors)
    delta, refined = stage2_refine(s2.source, meas, s2.sensors)
    np.testing.assert_allclose(delta, 0.0, atol=1e-9)


def test_stage2_reduces_perturbation(s2):
    meas = noiseless(s2.source, s2.sensors)
    start = SourceState.from_theta(s2.source.theta + np.array([1.0, 1.0, 0.1, 0.1]))
    _, refined = stage2_refine(start, meas, s2.sensors)
    assert np.linalg.norm(refined.theta - s2.source.theta) < np.linalg.norm(start.theta - s2.source.theta)


def test_stage2_descent_median(s2):
    for sigma2 in (1e-2, 1.0):
        d1, d2 = [], []
        for t in range(300):
            rng = np.random.default_rng([5, t])
            meas = sample_measurements(rng, s2.source, s2.sensors, NoiseSpec(sigma2))
            res = clear_estimate(meas, s2.sensors)
            d1.append(np.linalg.norm(res.stage1_estimate.theta - s2.source.theta))
            d2.append(np.linalg.norm(res.refined_estimate.theta - s2.source.theta))
        assert np.median(d2) <= np.median(d1)


def test_result_consistency(s2):
    meas = sample_measurements(np.random.default_rng(8), s2.source, s2.sensors, NoiseSpec(1.0))
    res = clear_estimate(meas, s2.sensors)
    np.testing.assert_allclose(res.refined_estimate.theta, res.stage1_estimate.theta - res.delta)
    costs = [c.cost for c in res.candidates]
    assert costs[0] == min(costs)
    assert res.estimate is res.refined_estimate


def test_noiseless_end_to_end(s1, s4):
    for sc in (s1, s4):
        res = clear_estimate(noiseless(sc.source, sc.sensors), sc.sensors)
        assert_state_close(res.estimate, sc.source)
    res = clear_estimate(noiseless(s4.source, s4.sensors), s4.sensors)
    np.testing.assert_allclose(res.estimate.position, [600, 650, 550], atol=1e-6)
    np.testing.assert_allclose(res.estimate.velocity, [-20, 15, 40], atol=1e-6)


def test_too_few_sensors_rejected(s1):
    meas = MeasurementSet([1.0], [0.1], build_covariance(1, NoiseSpec(1.0)))
    with pytest.raises(InsufficientSensorsError):
        clear_estimate(meas, s1.sensors.subset(2))


@pytest.mark.parametrize("dim", [2, 3])
def test_noiseless_exactness_random(dim):
    rng = np.random.default_rng(100 + dim)
    for _ in range(100):
        count = int(rng.integers(dim + 1, dim + 4))
        source = random_state(rng, dim)
        sensors = random_geometry(rng, dim, count, source=source)
        res = clear_estimate(noiseless(source, sensors), sensors)
        tol = 1e-6 * np.linalg.norm(source.theta)
        errs = [np.linalg.norm(c.state.theta - source.theta) for c in res.candidates]
        assert min(errs) <= tol
        # with minimal sensors a second exact fit may exist; otherwise the truth is selected
        if count > dim + 1 or len(res.candidates) == 1:
            assert errs[0] <= tol


def test_translation_equivariance(s2):
    meas = sample_measurements(np.random.default_rng(3), s2.source, s2.sensors, NoiseSpec(1.0))
    base = clear_estimate(meas, s2.sensors).estimate
    t = np.array([1234.5, -678.25])
    moved = SensorArray(s2.sensors.positions + t, s2.sensors.velocities)
    shifted = clear_estimate(meas, moved).estimate
    np.testing.assert_allclose(shifted.position, base.position + t, atol=1e-6)
    np.testing.assert_allclose(shifted.velocity, base.velocity, atol=1e-6)


def test_options_validation():
    with pytest.raises(ValueError):
        ClearOptions(weight_iters=0)
    with pytest.raises(ValueError):
        ClearOptions(weight_iters=6)


def test_effective_covariance_noiseless(s1):
    meas = MeasurementSet(true_tdoa(s1.source, s1.sensors), true_fdoa(s1.source, s1.sensors),
                          np.zeros((4, 4)))
    np.testing.assert_array_equal(effective_covariance(meas), build_covariance(2, NoiseSpec(1.0)))
