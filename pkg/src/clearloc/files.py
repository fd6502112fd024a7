"""CSV and JSON readers/writers for sensors, measurements and simulation output.

Floats are written with ``repr`` so every file round-trips exactly.

Formats::

    sensors.csv       id,x,y[,z],vx,vy[,vz]      row id 0 is the reference
    measurements.csv  i,tdoa_m,fdoa_mps          i = 1..M
    covariance.csv    2M rows of 2M comma-separated values, no header
    summary.csv       one row per (n_sensors, sigma2, estimator)
    records.csv       one row per trial and estimator
    cdf.csv           estimator,pos_error,fraction
    cdf_p95.csv       estimator,p95_pos_error
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ClearError, ParseError
from .model import MeasurementSet, SensorArray
from .sim import RECORD_FIELDS, SUMMARY_FIELDS, SummaryRow, TrialRecord


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_rows(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _read_rows(path):
    try:
        with Path(path).open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path} is empty")
    return [h.strip() for h in rows[0]], rows[1:]


def _floats(row, path, lineno):
    try:
        return [float(x) for x in row]
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: {exc}") from exc


def write_sensors(path, sensors: SensorArray):
    axes = "xyz"[: sensors.dim]
    header = ["id", *axes, *(f"v{a}" for a in axes)]
    rows = [
        [i, *map(float, p), *map(float, v)]
        for i, (p, v) in enumerate(zip(sensors.positions, sensors.velocities))
    ]
    _write_rows(path, header, rows)


def read_sensors(path) -> SensorArray:
    header, rows = _read_rows(path)
    if header == ["id", "x", "y", "vx", "vy"]:
        dim = 2
    elif header == ["id", "x", "y", "z", "vx", "vy", "vz"]:
        dim = 3
    else:
        raise ParseError(f"{path}: unexpected sensor header {header}")
    data = []
    for k, row in enumerate(rows, start=2):
        if len(row) != 2 * dim + 1:
            raise ParseError(f"{path}:{k}: expected {2 * dim + 1} fields, got {len(row)}")
        data.append(_floats(row, path, k))
    if not data:
        raise ParseError(f"{path}: no sensor rows")
    data = np.array(sorted(data, key=lambda r: r[0]))
    if not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ParseError(f"{path}: sensor ids must be 0..{len(data) - 1}")
    try:
        return SensorArray(data[:, 1:dim + 1], data[:, dim + 1:])
    except ClearError:
        raise
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_measurements(path, meas: MeasurementSet):
    rows = [[i + 1, float(r), float(rd)] for i, (r, rd) in enumerate(zip(meas.tdoa, meas.fdoa))]
    _write_rows(path, ["i", "tdoa_m", "fdoa_mps"], rows)


def read_measurements(path):
    """Return ``(tdoa, fdoa)`` arrays ordered by index."""
    header, rows = _read_rows(path)
    if header != ["i", "tdoa_m", "fdoa_mps"]:
        raise ParseError(f"{path}: unexpected measurement header {header}")
    data = []
    for k, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise ParseError(f"{path}:{k}: expected 3 fields, got {len(row)}")
        data.append(_floats(row, path, k))
    if not data:
        raise ParseError(f"{path}: no measurement rows")
    data = np.array(sorted(data, key=lambda r: r[0]))
    if not np.array_equal(data[:, 0], np.arange(1, len(data) + 1)):
        raise ParseError(f"{path}: measurement indices must be 1..M")
    return data[:, 1], data[:, 2]


def write_covariance(path, q: np.ndarray):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(q, dtype=float):
            w.writerow([repr(float(x)) for x in row])


def read_covariance(path) -> np.ndarray:
    try:
        with Path(path).open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    data = [_floats(r, path, k) for k, r in enumerate(rows, start=1)]
    if len({len(r) for r in data}) > 1:
        raise ParseError(f"{path}: rows have different lengths")
    q = np.array(data) if data else np.empty((0, 0))
    if q.ndim != 2 or q.shape[0] != q.shape[1] or q.size == 0:
        raise ParseError(f"{path}: covariance must be a non-empty square matrix")
    return q


def _record_row(r: TrialRecord):
    return [getattr(r, f) for f in RECORD_FIELDS]


def _summary_row(r: SummaryRow):
    return [getattr(r, f) for f in SUMMARY_FIELDS]


def _parse_bool(x):
    return x in ("1", "true", "True", True, 1)


def _coerce(cls, fields, values):
    kinds = cls.__dataclass_fields__
    out = {}
    for name, raw in zip(fields, values):
        kind = kinds[name].type
        if kind in ("bool", bool):
            out[name] = _parse_bool(raw)
        elif kind in ("int", int):
            out[name] = int(raw)
        elif kind in ("float", float):
            out[name] = float(raw)
        else:
            out[name] = "" if raw is None else str(raw)
    return cls(**out)


def write_records(path, records, fmt: str = "csv"):
    if fmt == "json":
        _write_json(path, [dict(zip(RECORD_FIELDS, _record_row(r))) for r in records])
    else:
        _write_rows(path, RECORD_FIELDS, map(_record_row, records))


def read_records(path, fmt: str = "csv") -> list:
    if fmt == "json":
        rows = _read_json(path)
        return [_coerce(TrialRecord, RECORD_FIELDS, [d[f] for f in RECORD_FIELDS]) for d in rows]
    header, rows = _read_rows(path)
    if tuple(header) != RECORD_FIELDS:
        raise ParseError(f"{path}: unexpected record header")
    return [_coerce(TrialRecord, RECORD_FIELDS, row) for row in rows]


def write_summary(path, rows, fmt: str = "csv"):
    if fmt == "json":
        _write_json(path, [dict(zip(SUMMARY_FIELDS, _summary_row(r))) for r in rows])
    else:
        _write_rows(path, SUMMARY_FIELDS, map(_summary_row, rows))


def read_summary(path, fmt: str = "csv") -> list:
    if fmt == "json":
        rows = _read_json(path)
        return [_coerce(SummaryRow, SUMMARY_FIELDS, [d[f] for f in SUMMARY_FIELDS]) for d in rows]
    header, rows = _read_rows(path)
    if tuple(header) != SUMMARY_FIELDS:
        raise ParseError(f"{path}: unexpected summary header")
    return [_coerce(SummaryRow, SUMMARY_FIELDS, row) for row in rows]


def write_cdf(path, curves: dict):
    """``curves`` maps estimator tag to an :class:`~clearloc.sim.EmpiricalCdf`."""
    rows = [
        [tag, float(e), float(f)]
        for tag, cdf in curves.items()
        for e, f in zip(cdf.errors, cdf.fractions)
    ]
    _write_rows(path, ["estimator", "pos_error", "fraction"], rows)


def write_p95(path, curves: dict):
    _write_rows(path, ["estimator", "p95_pos_error"], [[t, c.p95] for t, c in curves.items()])


def read_cdf(path) -> dict:
    header, rows = _read_rows(path)
    if header != ["estimator", "pos_error", "fraction"]:
        raise ParseError(f"{path}: unexpected CDF header")
    out = {}
    for k, (tag, e, f) in enumerate(rows, start=2):
        out.setdefault(tag, []).append(_floats([e, f], path, k))
    return {t: np.array(v) for t, v in out.items()}


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _write_json(path, rows):
    rows = [{k: _json_safe(v) for k, v in d.items()} for d in rows]
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
