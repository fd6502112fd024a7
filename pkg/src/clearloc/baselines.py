"""Reference estimators used for comparison.

``ho_xu_tswls``
    The classical two-step WLS solution for a moving source (Ho and Xu,
    IEEE Trans. Signal Process., 2004). Step one treats the reference range
    and range rate as free unknowns, which needs ``M >= N + 1`` difference
    measurements. Step two exploits the squared relations between the
    unknowns and recovers position and velocity from the squared offsets.
    The sign of each position offset is taken from the step-one estimate.

``gauss_newton_ml``
    Damped Gauss-Newton on the ML cost ``(m - m(theta))^T Q^-1 (m - m(theta))``.
"""

from dataclasses import dataclass

import numpy as np

from .crlb import measurement_jacobian
from .errors import ClearError, GeometryRankError, InsufficientSensorsError
from .estimator import _spd_inverse, effective_covariance, noise_gain_matrix, wls_solve
from .model import MeasurementSet, SensorArray, SourceState, ml_cost, true_measurements


@dataclass
class BaselineResult:
    estimate: SourceState | None
    converged: bool
    iterations: int = 0
    failure_reason: str | None = None

    def __post_init__(self):
        if self.converged and (self.estimate is None or not self.estimate.is_finite()):
            raise ValueError("a converged result needs a finite estimate")


def _hx_stage1(meas: MeasurementSet, sensors: SensorArray, W1: np.ndarray):
    s, sd = sensors.positions, sensors.velocities
    s0, sd0, si, sdi = s[0], sd[0], s[1:], sd[1:]
    r, rd = meas.tdoa, meas.fdoa
    m, n = sensors.m_count, sensors.dim
    h = np.concatenate([
        r**2 - np.einsum("ij,ij->i", si, si) + s0 @ s0,
        2 * (r * rd - np.einsum("ij,ij->i", sdi, si) + sd0 @ s0),
    ])
    # unknown ordering: [u, v, u_dot, v_dot]
    G = np.zeros((2 * m, 2 * n + 2))
    G[:m, :n] = 2 * (s0 - si)
    G[:m, n] = -2 * r
    G[m:, :n] = 2 * (sd0 - sdi)
    G[m:, n] = -2 * rd
    G[m:, n + 1:2 * n + 1] = 2 * (s0 - si)
    G[m:, 2 * n + 1] = -2 * r
    phi, _ = wls_solve(G, W1, h)
    info = G.T @ W1 @ G
    return phi, info


def ho_xu_tswls(meas: MeasurementSet, sensors: SensorArray) -> BaselineResult:
    """Two-step WLS estimate; raises when fewer than ``N + 2`` sensors are given."""
    n, m = sensors.dim, sensors.m_count
    if m < n + 1:
        raise InsufficientSensorsError(
            f"two-step WLS needs at least {n + 2} sensors in {n}-D, got {m + 1}"
        )
    q = effective_covariance(meas)
    s0, sd0 = sensors.positions[0], sensors.velocities[0]
    try:
        phi1, info = _hx_stage1(meas, sensors, _spd_inverse(q))
        guess = SourceState(phi1[:n], phi1[n + 1:2 * n + 1])
        B1 = noise_gain_matrix(guess, sensors)
        phi1, info = _hx_stage1(meas, sensors, _spd_inverse(B1 @ q @ B1.T))

        u1, v1 = phi1[:n], phi1[n]
        ud1, vd1 = phi1[n + 1:2 * n + 1], phi1[2 * n + 1]
        du, dud = u1 - s0, ud1 - sd0
        h2 = np.concatenate([du**2, [v1**2], dud * du, [v1 * vd1]])
        G2 = np.zeros((2 * n + 2, 2 * n))
        G2[:n, :n] = np.eye(n)
        G2[n, :n] = 1.0
        G2[n + 1:2 * n + 1, n:] = np.eye(n)
        G2[2 * n + 1, n:] = 1.0
        B2 = np.zeros((2 * n + 2, 2 * n + 2))
        B2[:n, :n] = 2 * np.diag(du)
        B2[n, n] = 2 * v1
        B2[n + 1:2 * n + 1, :n] = np.diag(dud)
        B2[n + 1:2 * n + 1, n + 1:2 * n + 1] = np.diag(du)
        B2[2 * n + 1, n] = vd1
        B2[2 * n + 1, 2 * n + 1] = v1
        try:
            B2_inv = np.linalg.inv(B2)
        except np.linalg.LinAlgError as exc:
            raise GeometryRankError("second-step noise matrix is singular") from exc
        W2 = B2_inv.T @ info @ B2_inv
        phi2, _ = wls_solve(G2, 0.5 * (W2 + W2.T), h2)

        offset = np.where(du >= 0, 1.0, -1.0) * np.sqrt(np.abs(phi2[:n]))
        if np.any(offset == 0):
            raise GeometryRankError("zero position offset from the reference sensor")
        est = SourceState(s0 + offset, sd0 + phi2[n:] / offset)
    except (ClearError, np.linalg.LinAlgError) as exc:
        return BaselineResult(None, False, 1, getattr(exc, "tag", "linalg"))
    if not est.is_finite():
        return BaselineResult(None, False, 1, "non-finite")
    return BaselineResult(est, True, 1)


def gauss_newton_ml(meas: MeasurementSet, sensors: SensorArray, init: SourceState,
                    max_iter: int = 50, tol: float = 1e-9) -> BaselineResult:
    """Damped Gauss-Newton on the ML cost, starting from ``init``.

    Each step is halved up to 20 times until the cost does not increase.
    Iteration stops when the step norm drops below ``tol * max(1, |theta|)``
    or the decrease predicted by the linearization is at rounding level.
    A step that cannot be made non-increasing ends the run with
    ``converged=False`` unless it was already below tolerance.
    """
    if not init.is_finite():
        raise ValueError("initial state must be finite")
    wmeas = meas.with_covariance(effective_covariance(meas))
    q_inv = _spd_inverse(wmeas.covariance)
    theta = init.theta.copy()
    try:
        cost = ml_cost(wmeas, init, sensors)
        for it in range(1, max_iter + 1):
            state = SourceState.from_theta(theta)
            jac = measurement_jacobian(state, sensors)
            resid = wmeas.vector - true_measurements(state, sensors)
            step, _ = wls_solve(jac, q_inv, resid)
            small = np.linalg.norm(step) <= tol * max(1.0, np.linalg.norm(theta))
            # Decrease predicted by the linear model; at the rounding floor no step helps.
            predicted = step @ jac.T @ q_inv @ resid
            small = small or predicted <= 1e-12 * max(cost, np.finfo(float).tiny)
            for _ in range(21):
                trial = SourceState.from_theta(theta + step)
                try:
                    new_cost = ml_cost(wmeas, trial, sensors)
                except ClearError:
                    new_cost = np.inf
                if new_cost <= cost:
                    break
                step = step / 2
            else:
                if small:
                    return BaselineResult(state, True, it)
                return BaselineResult(state, False, it, "divergence")
            theta, cost = theta + step, new_cost
            if small:
                return BaselineResult(SourceState.from_theta(theta), True, it)
    except ClearError as exc:
        return BaselineResult(None, False, 0, exc.tag)
    return BaselineResult(SourceState.from_theta(theta), False, max_iter, "max-iterations")
