import json

import numpy as np
import pytest

from clearloc import files
from clearloc.cli import (
    EXIT_CONFIG,
    EXIT_INSUFFICIENT,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_UNOBSERVABLE,
    EXIT_USAGE,
    OUT_ENV,
    main,
)
from clearloc.model import SensorArray

from conftest import noiseless


@pytest.fixture
def s1_files(tmp_path, s1):
    files.write_sensors(tmp_path / "sensors.csv", s1.sensors)
    files.write_measurements(tmp_path / "meas.csv", noiseless(s1.source, s1.sensors))
    return tmp_path


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    assert all(f"scenario{i}" in out for i in range(1, 7))


def test_scenario_summary(tmp_path, capsys):
    code = main(["scenario", "--name", "scenario1", "--trials", "20", "--seed", "7",
                 "--out", str(tmp_path), "--no-plots"])
    assert code == EXIT_OK
    rows = files.read_summary(tmp_path / "scenario1" / "summary.csv")
    clear = [r for r in rows if r.estimator == "clear"]
    assert len(clear) == 11
    assert all(r.trials == 20 for r in rows)
    printed = capsys.readouterr().out
    # six significant digits on screen
    assert f"{clear[4].rmse_pos:.6g}" in printed


def test_scenario_env_out_dir_and_json(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "envout"))
    code = main(["scenario", "--name", "scenario2", "--trials", "5", "--format", "json",
                 "--estimators", "clear", "--records", "--no-plots"])
    assert code == EXIT_OK
    data = json.loads((tmp_path / "envout" / "scenario2" / "summary.json").read_text())
    assert {d["estimator"] for d in data} == {"clear"}
    recs = files.read_records(tmp_path / "envout" / "scenario2" / "records.json", "json")
    assert len(recs) == 5 * 11


def test_scenario3_cdf_and_plot(tmp_path):
    assert main(["scenario", "--name", "scenario3", "--trials", "30", "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "scenario3"
    curves = files.read_cdf(out / "cdf.csv")
    assert set(curves) == {"clear", "ho_xu"}
    lines = (out / "cdf_p95.csv").read_text().splitlines()
    assert lines[0] == "estimator,p95_pos_error" and len(lines) == 3
    assert (out / "cdf.png").stat().st_size > 0


def _tree(path):
    return {p.relative_to(path): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_scenario_runs_are_byte_identical(tmp_path):
    args = ["scenario", "--name", "scenario3", "--trials", "40", "--seed", "11", "--records"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) >= 5
    assert a == b


def test_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"name": "x"}')
    assert main(["scenario", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg.write_text("{not json")
    assert main(["scenario", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["scenario", "--name", "scenario1", "--estimators", "magic",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["scenario", "--name", "scenario1", "--trials", "0"]) == EXIT_USAGE
    assert main(["scenario", "--name", "scenario1", "--weight-iters", "9"]) == EXIT_USAGE


def test_estimate_noiseless(s1_files, capsys):
    code = main(["estimate", "--sensors", str(s1_files / "sensors.csv"),
                 "--measurements", str(s1_files / "meas.csv")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "refined: u = [400, 200]  u_dot = [20, 10]" in out
    assert "quartic real positive roots: 1" in out


def test_estimate_json(s1_files, capsys):
    code = main(["estimate", "--sensors", str(s1_files / "sensors.csv"),
                 "--measurements", str(s1_files / "meas.csv"), "--format", "json"])
    assert code == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(data["refined"]["position"], [400, 200], atol=1e-6)
    np.testing.assert_allclose(data["refined"]["velocity"], [20, 10], atol=1e-6)
    assert len(data["candidates"]) == 1


def test_estimate_with_covariance_file(s1_files, capsys):
    files.write_covariance(s1_files / "q.csv", 0.5 * np.eye(4))
    code = main(["estimate", "--sensors", str(s1_files / "sensors.csv"),
                 "--measurements", str(s1_files / "meas.csv"), "--covariance", str(s1_files / "q.csv")])
    assert code == EXIT_OK


def test_estimate_parse_errors(s1_files):
    bad = s1_files / "bad.csv"
    bad.write_text("id,x,y,vx,vy\n0,1,oops,0,0\n")
    assert main(["estimate", "--sensors", str(bad), "--measurements", str(s1_files / "meas.csv")]) == EXIT_PARSE
    files.write_covariance(s1_files / "q.csv", np.eye(3))
    assert main(["estimate", "--sensors", str(s1_files / "sensors.csv"),
                 "--measurements", str(s1_files / "meas.csv"),
                 "--covariance", str(s1_files / "q.csv")]) == EXIT_PARSE


def test_estimate_insufficient_sensors(s1_files):
    (s1_files / "two.csv").write_text("id,x,y,vx,vy\n0,50,50,20,30\n1,1000,1000,-10,-10\n")
    (s1_files / "one.csv").write_text("i,tdoa_m,fdoa_mps\n1,10.0,1.0\n")
    code = main(["estimate", "--sensors", str(s1_files / "two.csv"),
                 "--measurements", str(s1_files / "one.csv")])
    assert code == EXIT_INSUFFICIENT


def _bound(out, name):
    line = next(ln for ln in out.splitlines() if ln.startswith(name))
    return float(line.split("=")[1])


def test_crlb_command(s1_files, capsys):
    sensors = str(s1_files / "sensors.csv")
    assert main(["crlb", "--sensors", sensors, "--source", "400,200,20,10"]) == EXIT_OK
    out1 = capsys.readouterr().out
    assert "small_noise_ok = true" in out1
    assert main(["crlb", "--sensors", sensors, "--source", "400,200,20,10",
                 "--sigma2-tdoa", "100"]) == EXIT_OK
    out2 = capsys.readouterr().out
    for name in ("position_rmse_bound", "velocity_rmse_bound"):
        # printed to six significant digits
        assert _bound(out2, name) == pytest.approx(10 * _bound(out1, name), rel=1e-5)


def test_crlb_unobservable(tmp_path):
    files.write_sensors(tmp_path / "col.csv",
                        SensorArray([[0, 0], [100, 0], [200, 0]], np.zeros((3, 2))))
    assert main(["crlb", "--sensors", str(tmp_path / "col.csv"), "--source", "300,0,0,0"]) == EXIT_UNOBSERVABLE


def test_crlb_bad_source(s1_files):
    assert main(["crlb", "--sensors", str(s1_files / "sensors.csv"), "--source", "1,2,3"]) == EXIT_PARSE
