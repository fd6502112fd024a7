"""Command-line front end.

Commands::

    clearloc scenario --name scenario1 [--full] [--jobs 4] [--records]
    clearloc scenario --config my_scenario.json
    clearloc estimate --sensors sensors.csv --measurements meas.csv [--covariance q.csv]
    clearloc crlb --sensors sensors.csv --source 400,200,20,10
    clearloc list-scenarios

Exit codes are listed in ``EXIT_CODES``.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import files, plotting
from .crlb import crlb_report
from .errors import (
    ClearError,
    DegenerateGeometryError,
    EstimationFailure,
    GeometryRankError,
    InsufficientSensorsError,
    NoSolutionError,
    ParseError,
    RankDeficiencyError,
    UnobservableGeometryError,
)
from .estimator import ClearOptions, clear_estimate
from .model import MeasurementSet, NoiseSpec, SourceState, build_covariance
from .sim import (
    ESTIMATORS,
    PRESET_NAMES,
    empirical_cdf,
    preset,
    run_trials,
    scenario_from_dict,
    select,
    summarize,
)

OUT_ENV = "CLEARLOC_OUT"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INSUFFICIENT = 4
EXIT_ESTIMATION = 5
EXIT_UNOBSERVABLE = 6
EXIT_DEGENERATE = 7
EXIT_CONFIG = 8

EXIT_CODES = {
    EXIT_OK: "success",
    EXIT_INTERNAL: "unexpected internal error",
    EXIT_USAGE: "bad command-line usage",
    EXIT_PARSE: "input file could not be parsed",
    EXIT_INSUFFICIENT: "too few sensors for the dimension",
    EXIT_ESTIMATION: "estimation failed (no admissible root, rank deficiency)",
    EXIT_UNOBSERVABLE: "Fisher information is singular",
    EXIT_DEGENERATE: "coincident sensors or source on a sensor",
    EXIT_CONFIG: "invalid scenario configuration or output directory",
}


class ConfigError(Exception):
    tag = "config"


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, InsufficientSensorsError):
        return EXIT_INSUFFICIENT
    if isinstance(exc, UnobservableGeometryError):
        return EXIT_UNOBSERVABLE
    if isinstance(exc, DegenerateGeometryError):
        return EXIT_DEGENERATE
    if isinstance(exc, (EstimationFailure, NoSolutionError, RankDeficiencyError, GeometryRankError)):
        return EXIT_ESTIMATION
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_INTERNAL


def _g6(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "clearloc_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _options(args) -> ClearOptions:
    return ClearOptions(weight_iters=args.weight_iters)


def _noise(args) -> NoiseSpec:
    return NoiseSpec(args.sigma2_tdoa, args.sigma2_fdoa)


def _print_table(rows, fields):
    print(",".join(fields))
    for r in rows:
        print(",".join(_g6(getattr(r, f)) for f in fields))


# ---------------------------------------------------------------- scenario

def _load_scenario(args):
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
            scenario = scenario_from_dict(cfg)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config {args.config}: {exc}") from exc
    else:
        try:
            scenario = preset(args.name, full=args.full)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.estimators:
        changes["estimators"] = tuple(args.estimators.split(","))
    try:
        return replace(scenario, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_scenario(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args) / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    records = run_trials(scenario, options=_options(args), jobs=args.jobs)
    rows = summarize(records)
    files.write_summary(out / f"summary.{ext}", rows, ext)
    written = [out / f"summary.{ext}"]
    if args.records:
        files.write_records(out / f"records.{ext}", records, ext)
        written.append(out / f"records.{ext}")

    # CDF output for single-cell random-geometry runs
    if not scenario.fixed_geometry and len(scenario.counts) == 1 and len(scenario.noise_grid) == 1:
        curves = {}
        for tag in scenario.estimators:
            cell = [r for r in select(records, tag) if not r.failed]
            if cell:
                curves[tag] = empirical_cdf(cell)
        files.write_cdf(out / "cdf.csv", curves)
        files.write_p95(out / "cdf_p95.csv", curves)
        written += [out / "cdf.csv", out / "cdf_p95.csv"]
        if not args.no_plots:
            plotting.plot_cdf(curves, out / "cdf.png", scenario.name)
            written.append(out / "cdf.png")
    elif not args.no_plots:
        if len(scenario.counts) > 1:
            for sigma2 in scenario.noise_grid:
                sel = [r for r in rows if r.sigma2 == sigma2]
                path = out / f"rmse_vs_sensors_{sigma2:g}.png"
                plotting.plot_rmse_vs_sensors(sel, path, f"{scenario.name}, sigma^2 = {sigma2:g}")
                written.append(path)
        elif len(scenario.noise_grid) > 1:
            plotting.plot_rmse_vs_noise(rows, out / "rmse_vs_noise.png", scenario.name)
            written.append(out / "rmse_vs_noise.png")

    print(f"# {scenario.name}: {scenario.description}")
    print(f"# trials={scenario.trials} seed={scenario.seed}")
    _print_table(rows, ("sigma2", "n_sensors", "estimator", "rmse_pos", "rmse_vel",
                        "crlb_pos", "crlb_vel", "failure_rate", "trials", "flagged"))
    for path in written:
        print(f"# wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def _state_line(label, s: SourceState):
    return f"{label}: u = [{', '.join(_g6(float(x)) for x in s.position)}]" \
           f"  u_dot = [{', '.join(_g6(float(x)) for x in s.velocity)}]"


def cmd_estimate(args) -> int:
    sensors = files.read_sensors(args.sensors)
    tdoa, fdoa = files.read_measurements(args.measurements)
    m = len(tdoa)
    if m != sensors.m_count:
        raise ParseError(
            f"{args.measurements} has {m} measurement rows but {args.sensors} "
            f"implies {sensors.m_count}"
        )
    if args.covariance:
        q = files.read_covariance(args.covariance)
        if q.shape != (2 * m, 2 * m):
            raise ParseError(f"covariance must be {2 * m}x{2 * m}, got {q.shape}")
    else:
        q = build_covariance(m, _noise(args))
    try:
        meas = MeasurementSet(tdoa, fdoa, q)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    res = clear_estimate(meas, sensors, _options(args))
    if args.format == "json":
        payload = {
            "stage1": {"position": res.stage1_estimate.position.tolist(),
                       "velocity": res.stage1_estimate.velocity.tolist()},
            "refined": {"position": res.refined_estimate.position.tolist(),
                        "velocity": res.refined_estimate.velocity.tolist()},
            "candidates": [
                {"v": c.nuisance.v, "vdot": c.nuisance.vdot, "ml_cost": c.cost,
                 "position": c.state.position.tolist(), "velocity": c.state.velocity.tolist()}
                for c in res.candidates
            ],
            "root_count": res.diagnostics.get("root_count"),
        }
        print(json.dumps(payload, indent=1))
        return EXIT_OK
    print(_state_line("stage1 ", res.stage1_estimate))
    print(_state_line("refined", res.refined_estimate))
    print(f"quartic real positive roots: {res.diagnostics.get('root_count')}")
    print("candidates (v, v_dot, ml_cost):")
    for c in res.candidates:
        print(f"  {_g6(c.nuisance.v)}, {_g6(c.nuisance.vdot)}, {_g6(c.cost)}")
    return EXIT_OK


# ---------------------------------------------------------------- crlb

def _parse_source(text: str, dim: int) -> SourceState:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ParseError(f"bad --source value {text!r}") from exc
    if len(vals) != 2 * dim:
        raise ParseError(f"--source needs {2 * dim} comma-separated values for {dim}-D sensors")
    return SourceState.from_theta(vals)


def cmd_crlb(args) -> int:
    sensors = files.read_sensors(args.sensors)
    source = _parse_source(args.source, sensors.dim)
    if args.covariance:
        q = files.read_covariance(args.covariance)
    else:
        q = build_covariance(sensors.m_count, _noise(args))
    rep = crlb_report(source, sensors, q, with_prediction=False)
    margins = {k: float(v) for k, v in rep.margins.items()}
    if args.format == "json":
        print(json.dumps({
            "crlb": rep.crlb.tolist(),
            "position_rmse_bound": rep.position_rmse_bound,
            "velocity_rmse_bound": rep.velocity_rmse_bound,
            "small_noise_ok": rep.small_noise_ok,
            "margins": {k: (v if np.isfinite(v) else repr(v)) for k, v in margins.items()},
        }, indent=1))
        return EXIT_OK
    print("CRLB:")
    for row in rep.crlb:
        print("  " + ", ".join(f"{x:.6g}" for x in row))
    print(f"position_rmse_bound = {rep.position_rmse_bound:.6g}")
    print(f"velocity_rmse_bound = {rep.velocity_rmse_bound:.6g}")
    print(f"small_noise_ok = {str(rep.small_noise_ok).lower()}")
    print("margins: " + ", ".join(f"{k}={v:.6g}" for k, v in margins.items()))
    return EXIT_OK


def cmd_list_scenarios(args) -> int:
    for name in PRESET_NAMES:
        sc = preset(name)
        print(f"{name}: {sc.description} (dim={sc.dim}, sensors={list(sc.counts)}, "
              f"noise levels={len(sc.noise_grid)}, trials={sc.trials}, "
              f"estimators={','.join(sc.estimators)})")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--trials", type=int, default=None, help="Monte Carlo trials per cell")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./clearloc_out)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--weight-iters", type=int, default=2, help="Stage-1 weighting passes (1-5)")
    p.add_argument("--sigma2-tdoa", type=float, default=1.0, help="TDOA noise variance (m^2)")
    p.add_argument("--sigma2-fdoa", type=float, default=None,
                   help="FDOA noise variance (m^2/s^2); defaults to the TDOA value")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="clearloc",
        description="Closed-form TDOA/FDOA localization of a moving source.",
        epilog="exit codes: " + "; ".join(f"{k} {v}" for k, v in EXIT_CODES.items()),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("scenario", parents=[common], help="run a Monte Carlo scenario")
    src = sc.add_mutually_exclusive_group(required=True)
    src.add_argument("--name", choices=PRESET_NAMES)
    src.add_argument("--config", help="JSON scenario file")
    sc.add_argument("--estimators", default=None,
                    help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    sc.add_argument("--full", action="store_true", help="5000 trials per noise level")
    sc.add_argument("--jobs", type=int, default=1, help="worker processes")
    sc.add_argument("--records", action="store_true", help="also write per-trial records")
    sc.add_argument("--no-plots", action="store_true")
    sc.set_defaults(func=cmd_scenario)

    est = sub.add_parser("estimate", parents=[common], help="estimate from measurement files")
    est.add_argument("--sensors", required=True)
    est.add_argument("--measurements", required=True)
    est.add_argument("--covariance", default=None)
    est.set_defaults(func=cmd_estimate)

    cr = sub.add_parser("crlb", parents=[common], help="CRLB at a given source state")
    cr.add_argument("--sensors", required=True)
    cr.add_argument("--source", required=True, help="position then velocity, comma-separated")
    cr.add_argument("--covariance", default=None)
    cr.set_defaults(func=cmd_crlb)

    ls = sub.add_parser("list-scenarios", parents=[common], help="list the built-in scenarios")
    ls.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if not 1 <= args.weight_iters <= 5:
        print("error: --weight-iters must be in 1..5", file=sys.stderr)
        return EXIT_USAGE
    if args.sigma2_tdoa < 0 or (args.sigma2_fdoa is not None and args.sigma2_fdoa < 0):
        print("error: noise variances must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ClearError, ConfigError) as exc:
        code = _exit_code(exc)
        print(f"error [{getattr(exc, 'tag', 'error')}]: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
