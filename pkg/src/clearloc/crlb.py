"""Cramér-Rao bound and small-noise covariance prediction for joint TDOA/FDOA."""

from dataclasses import dataclass, field

import numpy as np

from .errors import UnobservableGeometryError
from .estimator import _spd_inverse, stage2_system
from .model import MeasurementSet, SensorArray, SourceState, ranges, true_fdoa, true_tdoa

RANK_TOL = 1e-12


@dataclass
class CrlbReport:
    crlb: np.ndarray
    predicted_cov: np.ndarray | None
    position_rmse_bound: float
    velocity_rmse_bound: float
    small_noise_ok: bool
    margins: dict = field(default_factory=dict)


def _unit_and_rate(state: SourceState, sensors: SensorArray):
    diff = state.position - sensors.positions
    dist = ranges(state.position, sensors)
    rho = diff / dist[:, None]
    rel_vel = state.velocity - sensors.velocities
    proj = rel_vel - rho * np.einsum("ij,ij->i", rho, rel_vel)[:, None]
    return rho, proj / dist[:, None]


def measurement_jacobian(theta: SourceState, sensors: SensorArray) -> np.ndarray:
    """Jacobian of ``[r; r_dot]`` w.r.t. ``[u; u_dot]``, shape (2M, 2N)."""
    rho, rho_dot = _unit_and_rate(theta, sensors)
    C = rho[1:] - rho[0]
    C_dot = rho_dot[1:] - rho_dot[0]
    m, n = C.shape
    jac = np.zeros((2 * m, 2 * n))
    jac[:m, :n] = C
    jac[m:, :n] = C_dot
    jac[m:, n:] = C
    return jac


def _inverse_information(info: np.ndarray) -> np.ndarray:
    info = 0.5 * (info + info.T)
    w = np.linalg.eigvalsh(info)
    if w[-1] <= 0 or w[0] <= RANK_TOL * w[-1]:
        raise UnobservableGeometryError("Fisher information matrix is rank deficient")
    return _spd_inverse(info)


def crlb(theta: SourceState, sensors: SensorArray, q: np.ndarray) -> np.ndarray:
    """``(J^T Q^-1 J)^-1`` at ``theta``."""
    jac = measurement_jacobian(theta, sensors)
    return _inverse_information(jac.T @ _spd_inverse(q) @ jac)


def predicted_cov(theta_bar: SourceState, sensors: SensorArray, q: np.ndarray) -> np.ndarray:
    """Small-noise covariance of the two-stage estimate, ``(G2^T W2 G2)^-1``.

    The Stage-2 matrices are evaluated at ``theta_bar`` with noise-free
    measurements generated from ``theta_bar`` itself.
    """
    surrogate = MeasurementSet(true_tdoa(theta_bar, sensors), true_fdoa(theta_bar, sensors), q)
    _, G2, B2 = stage2_system(theta_bar, surrogate, sensors)
    W2 = _spd_inverse(B2 @ q @ B2.T)
    return _inverse_information(G2.T @ W2 @ G2)


def small_noise_check(theta: SourceState, sensors: SensorArray, q: np.ndarray):
    """Whether three standard deviations stay below 1% of the nearest sensor range.

    Returns ``(ok, margins)``; each margin is ``0.01 * min_range / (3 sigma)``
    and must exceed 1.
    """
    m = sensors.m_count
    min_range = float(np.min(ranges(theta.position, sensors)))
    margins = {"min_range": min_range}
    for name, block in (("tdoa", q[:m, :m]), ("fdoa", q[m:, m:])):
        sigma = float(np.sqrt(np.max(np.diag(block))))
        margins[name] = np.inf if sigma == 0 else 0.01 * min_range / (3 * sigma)
    ok = margins["tdoa"] > 1 and margins["fdoa"] > 1
    return ok, margins


def crlb_report(theta: SourceState, sensors: SensorArray, q: np.ndarray,
                with_prediction: bool = True) -> CrlbReport:
    bound = crlb(theta, sensors, q)
    n = sensors.dim
    ok, margins = small_noise_check(theta, sensors, q)
    pred = predicted_cov(theta, sensors, q) if with_prediction else None
    return CrlbReport(
        crlb=bound,
        predicted_cov=pred,
        position_rmse_bound=float(np.sqrt(np.trace(bound[:n, :n]))),
        velocity_rmse_bound=float(np.sqrt(np.trace(bound[n:, n:]))),
        small_noise_ok=ok,
        margins=margins,
    )
