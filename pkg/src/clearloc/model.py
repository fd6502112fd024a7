"""Measurement model for joint TDOA/FDOA localization of a moving source.

Sensor 0 is the reference. TDOA values are range differences (meters) and
FDOA values are range-rate differences (meters/second), both taken against
the reference sensor.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CovarianceError, DegenerateGeometryError, InsufficientSensorsError

# Distances below this are treated as coincident points.
COINCIDENCE_TOL = 1e-9


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Positions and velocities of ``M + 1`` sensors; row 0 is the reference."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must be (M+1, N) with N in {{2, 3}}, got {pos.shape}")
        object.__setattr__(self, "positions", _frozen(pos, name="positions"))
        object.__setattr__(self, "velocities", _frozen(self.velocities, pos.shape, "velocities"))
        if self.m_count < self.dim:
            raise InsufficientSensorsError(
                f"{self.dim}-D localization needs at least {self.dim + 1} sensors, got {len(pos)}"
            )
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=-1) + np.eye(len(pos))
        if np.min(dist) <= COINCIDENCE_TOL:
            raise DegenerateGeometryError("two sensors share the same position")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def m_count(self) -> int:
        """Number of difference measurements M (sensors minus the reference)."""
        return self.positions.shape[0] - 1

    def subset(self, count: int) -> "SensorArray":
        """First ``count`` sensors, reference included."""
        return SensorArray(self.positions[:count], self.velocities[:count])

    def shifted(self, dp, dv=None) -> "SensorArray":
        dv = np.zeros(self.dim) if dv is None else dv
        return SensorArray(self.positions + dp, self.velocities + dv)

    def __eq__(self, other):
        if not isinstance(other, SensorArray):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.velocities, other.velocities
        )


@dataclass(frozen=True, eq=False)
class SourceState:
    """Source position ``u`` and velocity ``u_dot``; ``theta`` stacks them."""

    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.position, name="position")
        if pos.ndim != 1:
            raise ValueError("position must be a vector")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", _frozen(self.velocity, pos.shape, "velocity"))

    @classmethod
    def from_theta(cls, theta) -> "SourceState":
        theta = np.asarray(theta, dtype=float)
        n = theta.size // 2
        return cls(theta[:n], theta[n:])

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @property
    def dim(self) -> int:
        return self.position.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))

    def __eq__(self, other):
        if not isinstance(other, SourceState):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)


@dataclass(frozen=True)
class NoiseSpec:
    """Variance scales for the TDOA (m^2) and FDOA (m^2/s^2) noise."""

    sigma2_tdoa: float
    sigma2_fdoa: float | None = None

    def __post_init__(self):
        if self.sigma2_fdoa is None:
            object.__setattr__(self, "sigma2_fdoa", self.sigma2_tdoa)
        if self.sigma2_tdoa < 0 or self.sigma2_fdoa < 0:
            raise ValueError("noise variances must be nonnegative")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """M TDOA values, M FDOA values, and their 2M x 2M covariance.

    The covariance must be symmetric, positive semidefinite and block diagonal
    (no TDOA/FDOA cross terms). A zero covariance is allowed so that noiseless
    measurements can be represented; anything that inverts the covariance
    checks definiteness itself.
    """

    tdoa: np.ndarray
    fdoa: np.ndarray
    covariance: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = _frozen(self.tdoa, name="tdoa")
        if r.ndim != 1 or r.size < 1:
            raise ValueError("tdoa must be a non-empty vector")
        m = r.size
        object.__setattr__(self, "tdoa", r)
        object.__setattr__(self, "fdoa", _frozen(self.fdoa, (m,), "fdoa"))
        q = _frozen(self.covariance, (2 * m, 2 * m), "covariance")
        scale = max(np.max(np.abs(q)), np.finfo(float).tiny)
        if np.max(np.abs(q - q.T)) > 1e-12 * scale:
            raise CovarianceError("covariance is not symmetric")
        if np.any(q[:m, m:] != 0) or np.any(q[m:, :m] != 0):
            raise CovarianceError("covariance must be block diagonal (no TDOA/FDOA cross terms)")
        if np.min(np.linalg.eigvalsh(q)) < -1e-12 * scale:
            raise CovarianceError("covariance has negative eigenvalues")
        object.__setattr__(self, "covariance", q)

    @property
    def m_count(self) -> int:
        return self.tdoa.size

    @property
    def vector(self) -> np.ndarray:
        """Stacked measurement vector ``[r; r_dot]``."""
        return np.concatenate([self.tdoa, self.fdoa])

    def with_covariance(self, covariance) -> "MeasurementSet":
        return MeasurementSet(self.tdoa, self.fdoa, covariance)


def ranges(position, sensors: SensorArray) -> np.ndarray:
    """Distances from ``position`` to every sensor, reference first."""
    d = np.linalg.norm(np.asarray(position, dtype=float) - sensors.positions, axis=1)
    if np.min(d) <= COINCIDENCE_TOL:
        raise DegenerateGeometryError("source coincides with a sensor position")
    return d


def range_rates(source: SourceState, sensors: SensorArray) -> np.ndarray:
    diff = source.position - sensors.positions
    d = ranges(source.position, sensors)
    return np.einsum("ij,ij->i", diff, source.velocity - sensors.velocities) / d


def true_tdoa(source: SourceState, sensors: SensorArray) -> np.ndarray:
    d = ranges(source.position, sensors)
    return d[1:] - d[0]


def true_fdoa(source: SourceState, sensors: SensorArray) -> np.ndarray:
    rr = range_rates(source, sensors)
    return rr[1:] - rr[0]


def true_measurements(source: SourceState, sensors: SensorArray) -> np.ndarray:
    """Noise-free stacked vector ``[r; r_dot]`` for ``source``."""
    return np.concatenate([true_tdoa(source, sensors), true_fdoa(source, sensors)])


def build_covariance(m_count: int, spec: NoiseSpec) -> np.ndarray:
    """Block-diagonal covariance with blocks ``sigma2 * (ones + I) / 2``."""
    if m_count < 1:
        raise ValueError("m_count must be at least 1")
    base = (np.ones((m_count, m_count)) + np.eye(m_count)) / 2.0
    return scipy.linalg.block_diag(spec.sigma2_tdoa * base, spec.sigma2_fdoa * base)


def covariance_sqrt(q: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix, via its eigendecomposition."""
    w, v = np.linalg.eigh(q)
    scale = max(np.max(np.abs(w)), np.finfo(float).tiny)
    if np.min(w) < -1e-12 * scale:
        raise CovarianceError("covariance is not positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_measurements(
    rng: np.random.Generator, source: SourceState, sensors: SensorArray, spec: NoiseSpec
) -> MeasurementSet:
    """Noisy measurement draw ``m = m_true + dm`` with ``dm ~ N(0, Q)``."""
    q = build_covariance(sensors.m_count, spec)
    m_true = true_measurements(source, sensors)
    m = m_true + covariance_sqrt(q) @ rng.standard_normal(m_true.size)
    k = sensors.m_count
    return MeasurementSet(m[:k], m[k:], q)


def ml_cost(meas: MeasurementSet, theta: SourceState, sensors: SensorArray) -> float:
    """Gaussian log-likelihood cost ``e^T Q^-1 e`` with ``e = m - m_true(theta)``."""
    e = meas.vector - true_measurements(theta, sensors)
    try:
        factor = scipy.linalg.cho_factor(meas.covariance)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("measurement covariance is singular") from exc
    return float(max(e @ scipy.linalg.cho_solve(factor, e), 0.0))
