"""Monte Carlo harness: scenario presets, random geometry, trials and statistics.

Every trial draws from its own counter-based stream (Philox keyed by
``(seed, count index, noise index, trial)``), so results do not depend on the
order in which trials run or on how they are split across processes.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import gauss_newton_ml, ho_xu_tswls
from .crlb import crlb
from .errors import (
    ClearError,
    GeometryGenerationError,
    UndefinedStatisticError,
)
from .estimator import ClearOptions, clear_estimate, effective_covariance
from .model import (
    MeasurementSet,
    NoiseSpec,
    SensorArray,
    SourceState,
    build_covariance,
    ml_cost,
    sample_measurements,
)

ESTIMATORS = ("clear", "clear_stage1", "ho_xu", "gn_ml")

# Sensor rows: x, y, vx, vy
TABLE_2D = np.array([
    [50, 50, 20, 30],
    [1000, 1000, -10, -10],
    [200, 800, 50, 20],
    [500, 100, -30, 10],
], dtype=float)

# Sensor rows: x, y, z, vx, vy, vz
TABLE_3D = np.array([
    [300, 100, 150, 30, -20, 20],
    [400, 150, 100, -30, 10, 20],
    [300, 500, 200, 10, -20, 10],
    [350, 200, 100, 10, 20, 30],
    [-100, -100, -100, -20, 10, 10],
], dtype=float)

SWEEP_GRID = tuple(float(x) for x in np.logspace(-4, 6, 11))
DESK_TRIALS = 1000
FULL_TRIALS = 5000
VELOCITY_BOUND = 50.0


def table_array(table: np.ndarray, count: int) -> SensorArray:
    n = table.shape[1] // 2
    return SensorArray(table[:count, :n], table[:count, n:])


@dataclass(frozen=True)
class Scenario:
    """One simulation setup.

    Fixed-geometry scenarios set ``sensors`` and ``source``. Random-geometry
    scenarios leave ``sensors`` empty and list the sensor counts to draw in
    ``sensor_counts``; a missing ``source`` is drawn uniformly per trial.
    """

    name: str
    dim: int
    noise_grid: tuple
    trials: int
    estimators: tuple = ("clear",)
    seed: int = 0
    sensors: SensorArray | None = None
    source: SourceState | None = None
    sensor_counts: tuple = ()
    bounds: tuple = (0.0, 1000.0)
    description: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        grid = np.asarray(self.noise_grid, dtype=float)
        if grid.size == 0 or np.any(np.diff(grid) <= 0) or np.any(grid < 0):
            raise ValueError("noise grid must be nonnegative and strictly increasing")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimator tags: {sorted(unknown)}")
        if self.sensors is None and not self.sensor_counts:
            raise ValueError("scenario needs fixed sensors or random sensor counts")
        if self.sensors is not None and self.sensors.dim != self.dim:
            raise ValueError("sensor dimension does not match scenario dimension")

    @property
    def fixed_geometry(self) -> bool:
        return self.sensors is not None

    @property
    def counts(self) -> tuple:
        return (self.sensors.m_count + 1,) if self.fixed_geometry else tuple(self.sensor_counts)


def preset(name: str, full: bool = False) -> Scenario:
    """Scenario 1-6 configurations; ``full`` uses 5000 trials for the noise sweeps."""
    sweep_trials = FULL_TRIALS if full else DESK_TRIALS
    src2 = SourceState([400.0, 200.0], [20.0, 10.0])
    src3 = SourceState([600.0, 650.0, 550.0], [-20.0, 15.0, 40.0])
    presets = {
        "scenario1": lambda: Scenario(
            "scenario1", 2, SWEEP_GRID, sweep_trials, ("clear", "ho_xu"),
            sensors=table_array(TABLE_2D, 3), source=src2,
            description="2-D, three sensors (minimum), near-colinear geometry",
        ),
        "scenario2": lambda: Scenario(
            "scenario2", 2, SWEEP_GRID, sweep_trials, ("clear", "ho_xu", "gn_ml"),
            sensors=table_array(TABLE_2D, 4), source=src2,
            description="2-D, four sensors, estimator comparison",
        ),
        "scenario3": lambda: Scenario(
            "scenario3", 2, (25.0,), 200, ("clear", "ho_xu"), sensor_counts=(6,),
            description="2-D, six random sensors and random source, sigma = 5 m",
        ),
        "scenario4": lambda: Scenario(
            "scenario4", 3, SWEEP_GRID, sweep_trials, ("clear", "ho_xu"),
            sensors=table_array(TABLE_3D, 4), source=src3,
            description="3-D, four sensors (minimum)",
        ),
        "scenario5": lambda: Scenario(
            "scenario5", 3, SWEEP_GRID, sweep_trials, ("clear", "ho_xu"),
            sensors=table_array(TABLE_3D, 5), source=src3,
            description="3-D, five sensors",
        ),
        "scenario6": lambda: Scenario(
            "scenario6", 2, (25.0,), 500, ("clear", "ho_xu"),
            source=SourceState([550.0, 450.0], [-10.0, 5.0]),
            sensor_counts=tuple(range(3, 13)),
            description="2-D, 3 to 12 random sensors, sigma^2 = 25",
        ),
    }
    if name not in presets:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(presets)}")
    return presets[name]()


PRESET_NAMES = tuple(f"scenario{i}" for i in range(1, 7))


def trial_rng(seed: int, count_index: int, sigma_index: int, trial: int) -> np.random.Generator:
    """Independent Philox stream for one trial."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, count_index, sigma_index, trial])
    return np.random.Generator(np.random.Philox(ss))


def _stage1_regressor_condition(sensors: SensorArray) -> float:
    s, sd = sensors.positions, sensors.velocities
    m, n = sensors.m_count, sensors.dim
    G1 = np.zeros((2 * m, 2 * n))
    G1[:m, :n] = 2.0 * (s[0] - s[1:])
    G1[m:, :n] = 2.0 * (sd[0] - sd[1:])
    G1[m:, n:] = G1[:m, :n]
    return float(np.linalg.cond(G1.T @ G1))


def random_source(rng: np.random.Generator, dim: int, bounds=(0.0, 1000.0)) -> SourceState:
    lo, hi = bounds
    return SourceState(rng.uniform(lo, hi, dim), rng.uniform(-VELOCITY_BOUND, VELOCITY_BOUND, dim))


def random_geometry(rng: np.random.Generator, dim: int, count: int, bounds=(0.0, 1000.0),
                    source: SourceState | None = None, max_draws: int = 100) -> SensorArray:
    """Sensors uniform in ``bounds`` per axis, velocities uniform in [-50, 50] m/s.

    Draws with two sensors closer than 1 m, a source within 1 m of a sensor,
    or a Stage-1 regressor condition above 1e12 are redrawn.
    """
    if count < dim + 1:
        raise ValueError(f"{dim}-D geometry needs at least {dim + 1} sensors")
    lo, hi = bounds
    for _ in range(max_draws):
        pos = rng.uniform(lo, hi, (count, dim))
        vel = rng.uniform(-VELOCITY_BOUND, VELOCITY_BOUND, (count, dim))
        gaps = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if np.min(gaps) < 1.0:
            continue
        if source is not None and np.min(np.linalg.norm(pos - source.position, axis=1)) < 1.0:
            continue
        sensors = SensorArray(pos, vel)
        if _stage1_regressor_condition(sensors) > 1e12:
            continue
        return sensors
    raise GeometryGenerationError(f"no acceptable geometry after {max_draws} draws")


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    sigma2: float
    estimator: str
    n_sensors: int
    pos_error: float
    vel_error: float
    failed: bool
    failure_reason: str = ""
    ml_cost: float = float("nan")
    crlb_pos: float = float("nan")
    crlb_vel: float = float("nan")
    runtime: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not self.failed and (self.pos_error < 0 or self.vel_error < 0):
            raise ValueError("errors must be nonnegative")


RECORD_FIELDS = (
    "trial", "sigma2", "estimator", "n_sensors", "pos_error", "vel_error",
    "failed", "failure_reason", "ml_cost", "crlb_pos", "crlb_vel",
)


def _crlb_bounds(source, sensors, q):
    try:
        bound = crlb(source, sensors, q)
    except (ClearError, np.linalg.LinAlgError):
        return float("nan"), float("nan")
    n = sensors.dim
    return float(np.sqrt(np.trace(bound[:n, :n]))), float(np.sqrt(np.trace(bound[n:, n:])))


def _run_one(tag, meas, sensors, options, cache):
    if tag in ("clear", "clear_stage1"):
        if "clear" not in cache:
            try:
                cache["clear"] = clear_estimate(meas, sensors, options)
            except ClearError as exc:
                cache["clear"] = exc
        res = cache["clear"]
        if isinstance(res, Exception):
            raise res
        return res.refined_estimate if tag == "clear" else res.stage1_estimate
    if tag == "ho_xu":
        res = ho_xu_tswls(meas, sensors)
    else:
        init = SourceState(sensors.positions.mean(axis=0), sensors.velocities.mean(axis=0))
        res = gauss_newton_ml(meas, sensors, init)
    if not res.converged:
        raise _Failed(res.failure_reason or "not-converged")
    return res.estimate


class _Failed(Exception):
    def __init__(self, tag):
        super().__init__(tag)
        self.tag = tag


def run_cell_trials(scenario: Scenario, count_index: int, sigma_index: int, trials,
                    options: ClearOptions | None = None) -> list:
    """Records for the given trial indices of one (sensor count, noise level) cell."""
    options = options or ClearOptions()
    sigma2 = float(scenario.noise_grid[sigma_index])
    count = scenario.counts[count_index]
    spec = NoiseSpec(sigma2, sigma2)
    out = []
    fixed_bounds = None
    if scenario.fixed_geometry:
        q = build_covariance(scenario.sensors.m_count, spec)
        fixed_bounds = _crlb_bounds(scenario.source, scenario.sensors, q) if sigma2 > 0 else (0.0, 0.0)
    for trial in trials:
        rng = trial_rng(scenario.seed, count_index, sigma_index, trial)
        if scenario.fixed_geometry:
            sensors, source = scenario.sensors, scenario.source
        else:
            source = scenario.source
            if source is None:
                source = random_source(rng, scenario.dim, scenario.bounds)
            sensors = random_geometry(rng, scenario.dim, count, scenario.bounds, source)
        meas = sample_measurements(rng, source, sensors, spec)
        if fixed_bounds is not None:
            bounds = fixed_bounds
        elif sigma2 > 0:
            bounds = _crlb_bounds(source, sensors, meas.covariance)
        else:
            bounds = (0.0, 0.0)
        wmeas = meas.with_covariance(effective_covariance(meas))
        cache = {}
        for tag in scenario.estimators:
            t0 = time.perf_counter()
            try:
                est = _run_one(tag, meas, sensors, options, cache)
                cost = ml_cost(wmeas, est, sensors)
                rec = TrialRecord(
                    trial, sigma2, tag, count,
                    float(np.linalg.norm(est.position - source.position)),
                    float(np.linalg.norm(est.velocity - source.velocity)),
                    False, "", cost, *bounds,
                )
            except (ClearError, _Failed) as exc:
                rec = TrialRecord(trial, sigma2, tag, count, float("nan"), float("nan"),
                                  True, getattr(exc, "tag", "error"), float("nan"), *bounds)
            out.append(replace(rec, runtime=time.perf_counter() - t0))
    return out


def _cell_job(args):
    return run_cell_trials(*args)


def run_trials(scenario: Scenario, estimators=None, options: ClearOptions | None = None,
               jobs: int = 1, chunk: int = 250) -> list:
    """Run every cell of ``scenario``; failures are kept as records.

    Output order is (sensor count, noise level, trial, estimator position in
    ``estimators``) regardless of ``jobs``.
    """
    if estimators is not None:
        scenario = replace(scenario, estimators=tuple(estimators))
    options = options or ClearOptions()
    work = []
    for ci in range(len(scenario.counts)):
        for si in range(len(scenario.noise_grid)):
            for start in range(0, scenario.trials, chunk):
                trials = range(start, min(start + chunk, scenario.trials))
                work.append((scenario, ci, si, trials, options))
    if jobs <= 1:
        parts = [_cell_job(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_cell_job, work))
    return [rec for part in parts for rec in part]


def select(records, estimator=None, sigma2=None, n_sensors=None) -> list:
    return [
        r for r in records
        if (estimator is None or r.estimator == estimator)
        and (sigma2 is None or r.sigma2 == sigma2)
        and (n_sensors is None or r.n_sensors == n_sensors)
    ]


def _values(records, fieldname):
    if len(records) and not hasattr(records[0], "failed"):
        return np.asarray(records, dtype=float)
    return np.array([getattr(r, fieldname) for r in records if not r.failed], dtype=float)


def rmse(records, fieldname: str = "pos_error") -> float:
    """Root mean square of ``fieldname`` over non-failed records.

    ``records`` may also be a plain sequence of error values.
    """
    vals = _values(records, fieldname)
    if vals.size == 0:
        raise UndefinedStatisticError("no successful trials")
    return float(np.sqrt(np.mean(vals**2)))


def failure_fraction(records) -> float:
    if not records:
        return 0.0
    return sum(r.failed for r in records) / len(records)


@dataclass(frozen=True, eq=False)
class EmpiricalCdf:
    errors: np.ndarray
    fractions: np.ndarray
    p95: float

    def __call__(self, x) -> float:
        return float(np.searchsorted(self.errors, x, side="right") / self.errors.size)


def empirical_cdf(records, fieldname: str = "pos_error") -> EmpiricalCdf:
    """Sorted errors with fractions ``i/n`` and the linearly interpolated 95th percentile."""
    vals = np.sort(_values(records, fieldname))
    if vals.size == 0:
        raise UndefinedStatisticError("no successful trials")
    fractions = np.arange(1, vals.size + 1) / vals.size
    return EmpiricalCdf(vals, fractions, float(np.percentile(vals, 95)))


@dataclass(frozen=True)
class SummaryRow:
    sigma2: float
    n_sensors: int
    estimator: str
    rmse_pos: float
    rmse_vel: float
    crlb_pos: float
    crlb_vel: float
    failure_rate: float
    trials: int
    flagged: bool


SUMMARY_FIELDS = tuple(SummaryRow.__dataclass_fields__)


def summarize(records) -> list:
    """One row per (sensor count, noise level, estimator) in record order.

    RMSE excludes failed trials; cells with more than 1% failures are flagged.
    For random geometries the bound is the RMS of the per-trial bounds.
    """
    keys = []
    for r in records:
        key = (r.n_sensors, r.sigma2, r.estimator)
        if key not in keys:
            keys.append(key)
    rows = []
    for count, sigma2, tag in keys:
        cell = select(records, tag, sigma2, count)
        ok = [r for r in cell if not r.failed]
        nan = float("nan")
        bpos = np.array([r.crlb_pos for r in cell])
        bvel = np.array([r.crlb_vel for r in cell])
        finite = np.isfinite(bpos) & np.isfinite(bvel)
        fail = failure_fraction(cell)
        rows.append(SummaryRow(
            sigma2, count, tag,
            rmse(ok, "pos_error") if ok else nan,
            rmse(ok, "vel_error") if ok else nan,
            float(np.sqrt(np.mean(bpos[finite] ** 2))) if finite.any() else nan,
            float(np.sqrt(np.mean(bvel[finite] ** 2))) if finite.any() else nan,
            fail, len(cell), fail > 0.01,
        ))
    return rows


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a scenario from a JSON-style mapping.

    Keys: ``name``, ``dim``, ``noise_grid``, ``trials``, ``estimators``,
    ``seed``, ``sensors`` (rows of position then velocity), ``source``
    (position then velocity), ``sensor_counts``, ``bounds``.
    """
    dim = int(cfg["dim"])
    sensors = None
    if cfg.get("sensors") is not None:
        rows = np.asarray(cfg["sensors"], dtype=float)
        sensors = SensorArray(rows[:, :dim], rows[:, dim:])
    source = None
    if cfg.get("source") is not None:
        source = SourceState.from_theta(cfg["source"])
    return Scenario(
        name=str(cfg.get("name", "custom")),
        dim=dim,
        noise_grid=tuple(float(x) for x in cfg.get("noise_grid", SWEEP_GRID)),
        trials=int(cfg.get("trials", DESK_TRIALS)),
        estimators=tuple(cfg.get("estimators", ("clear",))),
        seed=int(cfg.get("seed", 0)),
        sensors=sensors,
        source=source,
        sensor_counts=tuple(int(c) for c in cfg.get("sensor_counts", ())),
        bounds=tuple(cfg.get("bounds", (0.0, 1000.0))),
        description=str(cfg.get("description", "")),
    )
