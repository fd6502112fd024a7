"""Elimination of the range-rate nuisance parameter.

Stage 1 leaves two bivariate quadratics in the nuisance pair ``(v, vdot)``::

    f_k(v, vdot) = a_k v^2 + b_k v vdot + c_k vdot^2 + d_k v + e_k vdot + f_k

Their Sylvester resultant with respect to ``vdot`` is a quartic in ``v``. The
quartic coefficients are recovered numerically: the 4x4 Sylvester determinant
is evaluated at five Chebyshev-Lobatto nodes and the Vandermonde system is
solved in the scaled variable ``t = v / scale``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoSolutionError, RankDeficiencyError

MIN_RANGE = 1e-6
PROPORTIONAL_TOL = 1e-10
RESIDUAL_TOL = 1e-6
DEGREE_TOL = 1e-10

_NODES = np.cos(np.arange(5) * np.pi / 4)
_VANDER = np.vander(_NODES, 5)


@dataclass(frozen=True, eq=False)
class QuadraticPair:
    """Coefficients ``(a, b, c, d, e, f)`` of the two quadratics, one row each."""

    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        for name in ("first", "second"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (6,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must hold six finite coefficients")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([self.first, self.second])

    def evaluate(self, v, vdot) -> np.ndarray:
        """Values ``[f1(v, vdot), f2(v, vdot)]``."""
        return self.matrix @ _monomials(v, vdot)

    def term_scale(self, v, vdot) -> np.ndarray:
        """Sum of absolute monomial terms of each quadratic, for relative checks."""
        return np.abs(self.matrix) @ np.abs(_monomials(v, vdot))

    def sylvester_matrix(self, v: float, degrees=(2, 2)) -> np.ndarray:
        """Sylvester matrix of the pair viewed as polynomials in ``vdot``."""
        return _sylvester_stack(self.matrix, np.atleast_1d(float(v)), degrees)[0]


def _monomials(v, vdot):
    return np.array([v * v, v * vdot, vdot * vdot, v, vdot, 1.0])


def _vdot_coeffs(row: np.ndarray, v: np.ndarray) -> list:
    """Row of a quadratic as a polynomial in ``vdot``: [quadratic, linear, constant]."""
    a, b, c, d, e, f = row
    return [np.full_like(v, c), b * v + e, a * v * v + d * v + f]


def _sylvester_stack(coeffs: np.ndarray, v: np.ndarray, degrees=(2, 2)) -> np.ndarray:
    """Sylvester matrices (one per ``v``) for the given formal ``vdot`` degrees."""
    d1, d2 = degrees
    p1 = _vdot_coeffs(coeffs[0], v)[2 - d1:]
    p2 = _vdot_coeffs(coeffs[1], v)[2 - d2:]
    size = d1 + d2
    out = np.zeros((v.size, size, size))
    for shift in range(d2):
        for k, col in enumerate(p1):
            out[:, shift + k, shift] = col
    for shift in range(d1):
        for k, col in enumerate(p2):
            out[:, shift + k, d2 + shift] = col
    return out


def _det(stack: np.ndarray) -> np.ndarray:
    """Determinants by first-row cofactor expansion.

    Keeps relative accuracy when the first row (the ``vdot^2`` coefficients)
    is tiny compared with the rest of the matrix.
    """
    n = stack.shape[-1]
    if n == 1:
        return stack[:, 0, 0]
    total = np.zeros(stack.shape[0])
    for j in range(n):
        coef = stack[:, 0, j]
        if not np.any(coef):
            continue
        minor = np.delete(stack[:, 1:, :], j, axis=2)
        total += (-1) ** j * coef * np.linalg.det(minor)
    return total


def vdot_degrees(q: "QuadraticPair", scale: float) -> tuple:
    """Effective degree in ``vdot`` of each quadratic.

    Coefficients whose contribution at ``|v|, |vdot| ~ scale`` is below
    ``1e-10`` of the largest term are rounding residue and are dropped. With
    exactly ``N + 1`` sensors the position block does not depend on ``vdot``
    at all, so the formal 4x4 resultant would vanish identically.
    """
    out = []
    for row in (q.first, q.second):
        a, b, c, d, e, f = np.abs(row)
        terms = np.array([a, b, c]) * scale**2
        big = max(terms.max(), d * scale, e * scale, f)
        if c * scale**2 > DEGREE_TOL * big:
            out.append(2)
        elif b * scale**2 + e * scale > DEGREE_TOL * big:
            out.append(1)
        else:
            out.append(0)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class QuarticPoly:
    """Quartic ``p[0] v^4 + ... + p[4]`` in the range nuisance ``v``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (5,) or not np.all(np.isfinite(p)):
            raise ValueError("quartic needs five finite coefficients")
        if not np.any(p):
            raise RankDeficiencyError("quartic is identically zero")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __call__(self, v):
        return np.polyval(self.p, v)

    def term_scale(self, v):
        return np.polyval(np.abs(self.p), np.abs(v))


def quadratic_coeffs(A, Adot, b, bdot) -> QuadraticPair:
    """Quadratics from ``u - s0 = b - A phi`` and ``u_dot - s0_dot = bdot - Adot phi``.

    ``A`` and ``Adot`` are N x 2; ``b`` and ``bdot`` are length N.
    """
    A, Adot = np.asarray(A, float), np.asarray(Adot, float)
    b, bdot = np.asarray(b, float), np.asarray(bdot, float)
    ata = A.T @ A
    adta = Adot.T @ A
    first = [
        ata[0, 0] - 1.0,
        2.0 * ata[0, 1],
        ata[1, 1],
        -2.0 * b @ A[:, 0],
        -2.0 * b @ A[:, 1],
        b @ b,
    ]
    second = [
        adta[0, 0],
        adta[0, 1] + adta[1, 0] - 1.0,
        adta[1, 1],
        -bdot @ A[:, 0] - b @ Adot[:, 0],
        -bdot @ A[:, 1] - b @ Adot[:, 1],
        bdot @ b,
    ]
    return QuadraticPair(np.array(first), np.array(second))


def are_proportional(q: QuadraticPair, tol: float = PROPORTIONAL_TOL) -> bool:
    n1, n2 = np.linalg.norm(q.first), np.linalg.norm(q.second)
    if n1 == 0.0 or n2 == 0.0:
        return True
    x, y = q.first / n1, q.second / n2
    cross = np.outer(x, y) - np.outer(y, x)
    return bool(np.max(np.abs(cross)) < tol)


def resultant(q: QuadraticPair, v, degrees=(2, 2)) -> np.ndarray:
    """Sylvester determinant evaluated directly at each ``v``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return _det(_sylvester_stack(q.matrix, v, degrees))


def default_scale(q: QuadraticPair) -> float:
    lead = np.max(np.abs(q.matrix[:, :3]))
    const = np.max(np.abs(q.matrix[:, 5]))
    if lead == 0.0 or const == 0.0:
        return 1.0
    return max(float(np.sqrt(const / lead)), 1.0)


def sylvester_quartic(q: QuadraticPair, scale: float | None = None) -> QuarticPoly:
    """Eliminate ``vdot`` and return the resultant polynomial in ``v`` (degree <= 4).

    ``scale`` should be of the order of the expected range; the interpolation
    nodes are ``scale * cos(k pi / 4)``. The resultant is taken with respect to
    each quadratic's effective ``vdot`` degree (see :func:`vdot_degrees`).
    """
    if are_proportional(q):
        raise RankDeficiencyError("the two quadratics are proportional")
    scale = default_scale(q) if scale is None else scale
    if not scale > 0:
        raise ValueError("scale must be positive")
    degrees = vdot_degrees(q, scale)
    if degrees == (0, 0):
        raise RankDeficiencyError("neither quadratic depends on the range rate")
    values = resultant(q, scale * _NODES, degrees)
    t_coeffs = np.linalg.solve(_VANDER, values)
    return QuarticPoly(t_coeffs / scale ** np.arange(4, -1, -1))


def _trimmed(coeffs: np.ndarray) -> np.ndarray:
    big = np.max(np.abs(coeffs))
    nz = np.flatnonzero(np.abs(coeffs) > 1e-12 * big)
    return coeffs[nz[0]:]


def _companion_roots(coeffs: np.ndarray) -> np.ndarray:
    c = _trimmed(coeffs)
    n = c.size - 1
    if n < 1:
        return np.empty(0, dtype=complex)
    comp = np.zeros((n, n))
    comp[0, :] = -c[1:] / c[0]
    comp[np.arange(1, n), np.arange(n - 1)] = 1.0
    return np.linalg.eigvals(comp)


def _polish(p: np.ndarray, dp: np.ndarray, x: float, steps: int = 3) -> float:
    for _ in range(steps):
        slope = np.polyval(dp, x)
        if slope == 0.0:
            break
        step = np.polyval(p, x) / slope
        if not np.isfinite(step):
            break
        x_new = x - step
        if abs(np.polyval(p, x_new)) > abs(np.polyval(p, x)):
            break
        x = x_new
    return x


def real_positive_roots(poly: QuarticPoly, scale: float = 1.0) -> list[float]:
    """Admissible range candidates: real, positive roots of ``poly``, ascending.

    A root counts as real when its imaginary part is at most ``1e-8 * scale``.
    A conjugate pair whose real part still annihilates the quartic to the
    residual tolerance is a numerically split multiple root and is kept as a
    single real value. Returns an empty list when nothing is admissible.
    """
    t_coeffs = poly.p * scale ** np.arange(4, -1, -1)
    t_poly = t_coeffs / np.max(np.abs(t_coeffs))
    dt_poly = np.polyder(t_poly)
    found = []
    for z in _companion_roots(t_poly):
        t = float(z.real)
        if t * scale <= MIN_RANGE:
            continue
        t = _polish(t_poly, dt_poly, t)
        v = t * scale
        if v <= MIN_RANGE:
            continue
        # Real roots pass trivially after polishing; split pairs must earn it.
        if abs(poly(v)) <= RESIDUAL_TOL * poly.term_scale(v):
            found.append(float(v))
    found.sort()
    # A multiple root splits by about sqrt(eps); report it once.
    groups = []
    for v in found:
        if groups and v - groups[-1][-1] <= 1e-6 * v:
            groups[-1].append(v)
        else:
            groups.append([v])
    return [float(np.mean(g)) for g in groups]


def _normalized_residual(q: QuadraticPair, v: float, vdot: float) -> float:
    scale = q.term_scale(v, vdot)
    val = np.abs(q.evaluate(v, vdot))
    return float(np.max(np.where(scale > 0, val / np.where(scale > 0, scale, 1.0), val)))


def recover_vdot(q: QuadraticPair, v: float) -> float:
    """Range rate matching the range root ``v``.

    Uses the closed-form ratio obtained by cancelling the ``vdot^2`` terms of
    the two quadratics. When that ratio is ill-defined, or does not satisfy
    both quadratics, each quadratic is solved for ``vdot`` and the root that
    best satisfies the pair is kept.
    """
    (a1, b1, c1, d1, e1, f1), (a2, b2, c2, d2, e2, f2) = q.first, q.second

    def det(x1, x2, y1, y2):
        return x1 * y2 - x2 * y1

    num = det(c1, c2, a1, a2) * v * v + det(c1, c2, d1, d2) * v + det(c1, c2, f1, f2)
    den = det(c1, c2, b1, b2) * v + det(c1, c2, e1, e2)
    den_scale = (abs(c1 * b2) + abs(c2 * b1)) * abs(v) + abs(c1 * e2) + abs(c2 * e1)
    if den_scale > 0 and abs(den) > 1e-9 * den_scale:
        vdot = float(-num / den)
        if np.isfinite(vdot) and _normalized_residual(q, v, vdot) <= 1e-9:
            return vdot
    return _vdot_from_quadratics(q, v)


def _stable_quadratic_roots(quad, lin, const):
    if quad == 0.0:
        return [] if lin == 0.0 else [-const / lin]
    disc = lin * lin - 4.0 * quad * const
    if disc < 0:
        if disc < -1e-9 * (lin * lin + abs(4.0 * quad * const)):
            return []
        disc = 0.0
    half = -0.5 * (lin + np.copysign(np.sqrt(disc), lin))
    roots = [half / quad]
    if half != 0.0:
        roots.append(const / half)
    return roots


def _vdot_from_quadratics(q: QuadraticPair, v: float) -> float:
    candidates = []
    for row in (q.first, q.second):
        quad, lin, const = (float(x) for x in _vdot_coeffs(row, np.array(float(v))))
        candidates.extend(y for y in _stable_quadratic_roots(quad, lin, const) if np.isfinite(y))
    if not candidates:
        raise NoSolutionError(f"no real range rate for v = {v:g}")
    resid = [_normalized_residual(q, v, y) for y in candidates]
    best = int(np.argmin(resid))
    if resid[best] > RESIDUAL_TOL:
        raise NoSolutionError(f"no range rate satisfies both quadratics at v = {v:g}")
    return float(candidates[best])
