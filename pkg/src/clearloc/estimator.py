"""Two-stage closed-form TDOA/FDOA estimator for a moving source (CLEAR).

Stage 1 writes the squared range equations and their time derivatives as a
pseudo-linear system in ``theta = [u; u_dot]`` with the reference range and
range rate ``phi = [v, vdot]`` as nuisance parameters. The WLS solution is
affine in ``phi``; imposing ``v = |u - s0|`` and ``v vdot = (u_dot - s0_dot)^T
(u - s0)`` gives two quadratics whose resultant is a quartic in ``v``. Every
admissible root yields a candidate and the one with the lowest ML cost wins.

Stage 2 linearizes around the Stage-1 estimate and removes the first-order
error with a second WLS solve.

Works with the minimum of ``N + 1`` sensors in ``N`` dimensions.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import polyelim
from .errors import (
    ClearError,
    CovarianceError,
    DegenerateGeometryError,
    EstimationFailure,
    GeometryRankError,
    InsufficientSensorsError,
    NoSolutionError,
    RankDeficiencyError,
)
from .model import (
    MeasurementSet,
    NoiseSpec,
    SensorArray,
    SourceState,
    build_covariance,
    ml_cost,
    ranges,
)

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class NuisancePair:
    """Range ``v`` and range rate ``vdot`` from the source to the reference sensor."""

    v: float
    vdot: float

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError("range nuisance must be positive")


@dataclass(frozen=True)
class Candidate:
    nuisance: NuisancePair
    state: SourceState
    cost: float = float("nan")


@dataclass(frozen=True, eq=False)
class Stage1System:
    """Pseudo-linear system ``h1 - G1 theta + D1 phi = B1 dm`` with weight ``W1``."""

    h1: np.ndarray
    G1: np.ndarray
    D1: np.ndarray
    B1: np.ndarray
    W1: np.ndarray

    @property
    def m_count(self) -> int:
        return self.h1.size // 2


@dataclass(frozen=True)
class ClearOptions:
    weight_iters: int = 2
    refine: bool = True

    def __post_init__(self):
        if not 1 <= self.weight_iters <= 5:
            raise ValueError("weight_iters must be between 1 and 5")


@dataclass
class EstimationResult:
    stage1_estimate: SourceState
    refined_estimate: SourceState
    delta: np.ndarray
    candidates: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def estimate(self) -> SourceState:
        return self.refined_estimate


def effective_covariance(meas: MeasurementSet) -> np.ndarray:
    """Covariance used for weighting.

    A singular covariance (noiseless data) carries no weighting information,
    so the unit-variance structure of the default noise model stands in.
    """
    q = meas.covariance
    try:
        scipy.linalg.cho_factor(q)
        return q
    except np.linalg.LinAlgError:
        return build_covariance(meas.m_count, NoiseSpec(1.0, 1.0))


def _spd_inverse(mat: np.ndarray) -> np.ndarray:
    mat = 0.5 * (mat + mat.T)
    try:
        factor = scipy.linalg.cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("weight covariance is not positive definite") from exc
    inv = scipy.linalg.cho_solve(factor, np.eye(len(mat)))
    return 0.5 * (inv + inv.T)


def wls_solve(G: np.ndarray, W: np.ndarray, rhs: np.ndarray):
    """Solve the normal equations ``G^T W G x = G^T W rhs``.

    Returns ``(x, condition)``. Raises :class:`GeometryRankError` when the
    normal matrix has condition number above ``1e12``.
    """
    normal = G.T @ W @ G
    normal = 0.5 * (normal + normal.T)
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise GeometryRankError(f"normal matrix condition {cond:.3g} exceeds {MAX_CONDITION:g}")
    try:
        factor = scipy.linalg.cho_factor(normal)
    except np.linalg.LinAlgError as exc:
        raise GeometryRankError("normal matrix is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, G.T @ W @ rhs), cond


def noise_gain(state: SourceState, sensors: SensorArray):
    """Diagonals of ``B`` and ``B_dot``: twice the ranges and range rates to sensors 1..M."""
    diff = sensors.positions[1:] - state.position
    dist = ranges(state.position, sensors)[1:]
    rate = np.einsum("ij,ij->i", sensors.velocities[1:] - state.velocity, diff) / dist
    return 2.0 * dist, 2.0 * rate


def noise_gain_matrix(state: SourceState, sensors: SensorArray) -> np.ndarray:
    """``[[B, 0], [B_dot, B]]`` evaluated at ``state``."""
    b, bdot = noise_gain(state, sensors)
    m = b.size
    out = np.zeros((2 * m, 2 * m))
    out[:m, :m] = np.diag(b)
    out[m:, :m] = np.diag(bdot)
    out[m:, m:] = np.diag(b)
    return out


def stage1_system(meas: MeasurementSet, sensors: SensorArray, state: SourceState | None = None):
    """Assemble the Stage-1 pseudo-linear system.

    With ``state`` omitted ``B1 = I`` so ``W1 = Q^-1``; otherwise ``B1`` is
    evaluated at ``state`` and ``W1 = (B1 Q B1^T)^-1``.
    """
    _check_counts(meas, sensors)
    s, sd = sensors.positions, sensors.velocities
    s0, sd0 = s[0], sd[0]
    si, sdi = s[1:], sd[1:]
    r, rd = meas.tdoa, meas.fdoa
    m, n = sensors.m_count, sensors.dim

    h = r**2 + s0 @ s0 - np.einsum("ij,ij->i", si, si)
    hdot = 2 * r * rd + 2 * sd0 @ s0 - 2 * np.einsum("ij,ij->i", sdi, si)
    G = 2.0 * (s0 - si)
    Gdot = 2.0 * (sd0 - sdi)

    G1 = np.zeros((2 * m, 2 * n))
    G1[:m, :n] = G
    G1[m:, :n] = Gdot
    G1[m:, n:] = G
    D1 = np.zeros((2 * m, 2))
    D1[:m, 0] = 2 * r
    D1[m:, 0] = 2 * rd
    D1[m:, 1] = 2 * r

    q = effective_covariance(meas)
    B1 = np.eye(2 * m) if state is None else noise_gain_matrix(state, sensors)
    W1 = _spd_inverse(B1 @ q @ B1.T)
    return Stage1System(np.concatenate([h, hdot]), G1, D1, B1, W1)


def _check_counts(meas: MeasurementSet, sensors: SensorArray):
    if sensors.m_count < sensors.dim:
        raise InsufficientSensorsError(
            f"{sensors.dim}-D needs {sensors.dim + 1} sensors, got {sensors.m_count + 1}"
        )
    if meas.m_count != sensors.m_count:
        raise ValueError(
            f"{meas.m_count} measurements do not match {sensors.m_count + 1} sensors"
        )


def stage1_affine(sys: Stage1System, sensors: SensorArray):
    """Affine map from ``phi`` to the Stage-1 WLS estimate.

    Returns ``(b, A, theta0, cond)`` with ``theta(phi) = theta0 - A phi`` and
    ``b = theta0 - [s0; s0_dot]``, so that ``u - s0 = b_u - A_u phi``.
    """
    sol, cond = wls_solve(sys.G1, sys.W1, np.column_stack([sys.h1, sys.D1]))
    theta0 = sol[:, 0]
    A = -sol[:, 1:]
    b = theta0 - np.concatenate([sensors.positions[0], sensors.velocities[0]])
    return b, A, theta0, cond


def stage1_solve(sys: Stage1System, meas: MeasurementSet, sensors: SensorArray, diagnostics=None):
    """Stage-1 candidates ``(NuisancePair, SourceState)`` for every admissible range root."""
    n = sensors.dim
    b, A, theta0, cond = stage1_affine(sys, sensors)
    quad = polyelim.quadratic_coeffs(A[:n], A[n:], b[:n], b[n:])
    m = sys.m_count
    scale = max(np.sqrt(np.max(np.abs(sys.h1[:m]))), np.linalg.norm(b[:n]), 1.0)
    try:
        quartic = polyelim.sylvester_quartic(quad, scale)
    except RankDeficiencyError as exc:
        raise EstimationFailure(f"nuisance elimination failed: {exc}") from exc
    roots = polyelim.real_positive_roots(quartic, scale)
    candidates = []
    for v in roots:
        try:
            vdot = polyelim.recover_vdot(quad, v)
        except NoSolutionError:
            continue
        theta = theta0 - A @ np.array([v, vdot])
        if np.all(np.isfinite(theta)):
            candidates.append((NuisancePair(v, vdot), SourceState.from_theta(theta)))
    if diagnostics is not None:
        diagnostics.update(
            quartic=quartic.p.tolist(),
            vdot_degrees=polyelim.vdot_degrees(quad, scale),
            root_count=len(roots),
            stage1_condition=float(cond),
        )
    if not candidates:
        raise EstimationFailure("no admissible positive range root")
    return candidates


def select_candidate(candidates, meas: MeasurementSet, sensors: SensorArray) -> SourceState:
    """Candidate state with the smallest ML cost; ties go to the smaller range."""
    return _rank_candidates(candidates, meas, sensors)[0].state


def _rank_candidates(candidates, meas, sensors) -> list:
    if not candidates:
        raise EstimationFailure("no candidates to choose from")
    scored = []
    for nuis, state in candidates:
        try:
            scored.append(Candidate(nuis, state, ml_cost(meas, state, sensors)))
        except DegenerateGeometryError:
            continue
    if not scored:
        raise EstimationFailure("every candidate has degenerate geometry")
    best = min(c.cost for c in scored)
    # Whitened costs are O(1) under noise; exact fits (every root when M = N) all tie.
    tied = [c for c in scored if c.cost <= best + TIE_RTOL * max(best, 1.0)]
    winner = min(tied, key=lambda c: c.nuisance.v)
    rest = sorted((c for c in scored if c is not winner), key=lambda c: (c.cost, c.nuisance.v))
    return [winner, *rest]


def stage1_iterate_weight(meas: MeasurementSet, sensors: SensorArray, iterations: int = 2,
                          diagnostics=None):
    """Stage 1 with re-weighting.

    Pass 1 weights with ``Q^-1``; each later pass evaluates ``B1`` at the best
    candidate of the previous pass. If a later pass fails, the previous pass's
    output is returned and ``weight_fallback`` is set in ``diagnostics``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    diagnostics = {} if diagnostics is None else diagnostics
    wmeas = meas.with_covariance(effective_covariance(meas))
    sys = stage1_system(meas, sensors)
    candidates = stage1_solve(sys, meas, sensors, diagnostics)
    passes = 1
    for _ in range(iterations - 1):
        best = select_candidate(candidates, wmeas, sensors)
        try:
            new_sys = stage1_system(meas, sensors, best)
            new_diag = {}
            new_candidates = stage1_solve(new_sys, meas, sensors, new_diag)
        except (ClearError, np.linalg.LinAlgError) as exc:
            log.debug("re-weighting pass failed: %s", exc)
            diagnostics["weight_fallback"] = True
            break
        sys, candidates = new_sys, new_candidates
        diagnostics.update(new_diag)
        passes += 1
    diagnostics["weight_passes"] = passes
    return sys, candidates


def stage2_system(theta_hat: SourceState, meas: MeasurementSet, sensors: SensorArray):
    """Linearized system ``h2 - G2 dtheta = B2 dm`` around ``theta_hat``.

    Returns ``(h2, G2, B2)`` where ``h2 = [d; d_dot]`` and
    ``G2 = [[F, 0], [F_dot, F]]``.
    """
    s, sd = sensors.positions, sensors.velocities
    s0, sd0, si, sdi = s[0], sd[0], s[1:], sd[1:]
    r, rd = meas.tdoa, meas.fdoa
    u, ud = theta_hat.position, theta_hat.velocity
    m, n = sensors.m_count, sensors.dim

    diff0 = u - s0
    v = np.linalg.norm(diff0)
    if v <= 1e-9:
        raise DegenerateGeometryError("estimate coincides with the reference sensor")
    rho = diff0 / v
    rho_dot = (np.eye(n) - np.outer(rho, rho)) @ (ud - sd0) / v

    d = r**2 + s0 @ s0 - np.einsum("ij,ij->i", si, si) + 2 * (si - s0) @ u + 2 * r * v
    ddot = (
        2 * rd * r
        + 2 * sd0 @ s0
        - 2 * np.einsum("ij,ij->i", sdi, si)
        + 2 * (sdi - sd0) @ u
        + 2 * (si - s0) @ ud
        + 2 * rd * v
        + 2 * r * (rho @ (ud - sd0))
    )
    F = 2 * (np.outer(r, rho) + si - s0)
    Fdot = 2 * (np.outer(rd, rho) + np.outer(r, rho_dot) + sdi - sd0)

    G2 = np.zeros((2 * m, 2 * n))
    G2[:m, :n] = F
    G2[m:, :n] = Fdot
    G2[m:, n:] = F
    return np.concatenate([d, ddot]), G2, noise_gain_matrix(theta_hat, sensors)


def stage2_refine(theta_hat: SourceState, meas: MeasurementSet, sensors: SensorArray,
                  diagnostics=None):
    """Return ``(delta, refined)`` with ``refined = theta_hat - delta``.

    When the Stage-2 normal matrix is singular the refinement is skipped,
    ``delta`` is zero and ``refinement_skipped`` is set in ``diagnostics``.
    """
    diagnostics = {} if diagnostics is None else diagnostics
    h2, G2, B2 = stage2_system(theta_hat, meas, sensors)
    W2 = _spd_inverse(B2 @ effective_covariance(meas) @ B2.T)
    try:
        delta, cond = wls_solve(G2, W2, h2)
    except GeometryRankError as exc:
        log.debug("stage 2 skipped: %s", exc)
        diagnostics["refinement_skipped"] = True
        return np.zeros_like(theta_hat.theta), theta_hat
    diagnostics["stage2_condition"] = float(cond)
    return delta, SourceState.from_theta(theta_hat.theta - delta)


def clear_estimate(meas: MeasurementSet, sensors: SensorArray,
                   options: ClearOptions | None = None) -> EstimationResult:
    """Run the full two-stage pipeline."""
    options = options or ClearOptions()
    _check_counts(meas, sensors)
    diagnostics = {}
    _, raw = stage1_iterate_weight(meas, sensors, options.weight_iters, diagnostics)
    wmeas = meas.with_covariance(effective_covariance(meas))
    ranked = _rank_candidates(raw, wmeas, sensors)
    theta_hat = ranked[0].state
    if options.refine:
        delta, refined = stage2_refine(theta_hat, meas, sensors, diagnostics)
    else:
        delta, refined = np.zeros_like(theta_hat.theta), theta_hat
    if not refined.is_finite():
        raise EstimationFailure("refined estimate is not finite")
    diagnostics["candidate_count"] = len(ranked)
    return EstimationResult(theta_hat, refined, delta, ranked, diagnostics)
