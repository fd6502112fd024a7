"""Exception hierarchy shared by every module.

Each class carries a short ``tag`` used by the CLI to pick an exit code.
"""


class ClearError(Exception):
    """Base class for all localization errors."""

    tag = "error"


class DegenerateGeometryError(ClearError, ValueError):
    """Source coincides with a sensor (distance below the coincidence threshold)."""

    tag = "degenerate-geometry"


class InsufficientSensorsError(ClearError, ValueError):
    tag = "insufficient-sensors"


class GeometryRankError(ClearError):
    """A WLS normal matrix is singular or too ill-conditioned to solve."""

    tag = "geometry-rank"


class UnobservableGeometryError(ClearError):
    """The Fisher information matrix is rank deficient."""

    tag = "unobservable-geometry"


class EstimationFailure(ClearError):
    """No admissible solution could be produced for this measurement set."""

    tag = "estimation-failure"


class RankDeficiencyError(ClearError):
    """The two nuisance quadratics are proportional, so they share infinitely many roots."""

    tag = "rank-deficiency"


class NoSolutionError(ClearError):
    tag = "no-solution"


class CovarianceError(ClearError, ValueError):
    tag = "covariance"


class UndefinedStatisticError(ClearError):
    tag = "undefined-statistic"


class GeometryGenerationError(ClearError):
    tag = "geometry-generation"


class ParseError(ClearError, ValueError):
    tag = "parse-error"
