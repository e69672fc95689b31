import json

import pandas as pd
import pytest

from rephase import atlas, cli, reference, timeopt
from rephase.errors import NonConvergenceError


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_time_solve_from_phase(capsys):
    code, out, _ = run(capsys, "--seed", "7", "time-solve", "--dtf", "-0.005", "--amax", "0.1")
    assert code == cli.EXIT_OK
    report = json.loads(out)
    assert report["command"] == "time-solve"
    assert report["seed"] == 7
    assert report["problem"]["chi"] == pytest.approx(0.05)
    assert report["solution"]["delta_L"] == pytest.approx(0.44866, abs=5e-4)
    assert report["solver"]["residual"] <= cli.REPORT_RESIDUAL_TOL


def test_time_solve_short_limit(capsys):
    code, out, _ = run(capsys, "time-solve", "--chi", "1e-4")
    assert code == cli.EXIT_OK
    assert json.loads(out)["solution"]["delta_L"] == pytest.approx(0.02, rel=1e-4)


def test_time_solve_writes_profile_and_report(capsys, tmp_path):
    profile = tmp_path / "profile.csv"
    output = tmp_path / "report.json"
    code, out, _ = run(capsys, "-o", str(output), "time-solve", "--chi", "0.05", "--profile", str(profile), "--points", "11")
    assert code == cli.EXIT_OK
    assert out == ""
    assert json.loads(output.read_text())["solution"]["chi"] == pytest.approx(0.05)
    df = pd.read_csv(profile)
    assert len(df) == 11
    assert "gamma_deg" in df.columns


@pytest.mark.parametrize("argv", [
    (),
    ("time-solve",),
    ("time-solve", "--dtf", "-0.005"),
    ("time-solve", "--chi", "1", "--dtf", "-1"),
    ("time-solve", "--chi", "-1"),
    ("fuel-solve", "--dL", "0.5"),
    ("fuel-solve", "--dL", "0.5", "--eta", "0.4", "--dtf", "-0.01"),
    ("fuel-solve", "--dL", "0.5", "--eta", "1.5"),
    ("validate", "--case", "table9:9"),
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == cli.EXIT_USAGE
    assert err


def test_infeasible_phase(capsys):
    code, _, err = run(capsys, "fuel-solve", "--dL", "0.3", "--dtf", "-0.05", "--amax", "1")
    assert code == cli.EXIT_INFEASIBLE
    assert "minimum dL" in err


def test_solver_failure_exit_code(capsys, monkeypatch):
    def fail(*args, **kwargs):
        raise NonConvergenceError("stalled", residual=0.25)

    monkeypatch.setattr(timeopt, "solve_time_optimal", fail)
    code, _, err = run(capsys, "time-solve", "--chi", "0.05")
    assert code == cli.EXIT_SOLVER
    assert "residual" in err


def test_fuel_solve(capsys):
    code, out, _ = run(capsys, "fuel-solve", "--dL", "0.5", "--eta", "0.4", "--eps", "0.01")
    assert code == cli.EXIT_OK
    report = json.loads(out)
    assert report["solution"]["J_norm"] == pytest.approx(0.61117, rel=1e-3)
    assert report["solution"]["n_arcs"] == 2
    assert report["problem"]["chi_max"] == pytest.approx(0.0620, abs=2e-4)


def test_atlas_query(capsys, tmp_path, make_grid):
    path = tmp_path / "fuel.csv"
    atlas.write_atlas(make_grid(), path)
    code, out, _ = run(capsys, "atlas-query", "--atlas", str(path), "--dL", "2.0", "--eta", "0.5")
    assert code == cli.EXIT_OK
    report = json.loads(out)
    (candidate,) = report["candidates"]
    assert candidate["source"] == "interpolated"
    assert candidate["l0"] == pytest.approx(1.25)
    assert candidate["l1"] == pytest.approx(1.7)
    assert report["J_norm"] == pytest.approx(0.5)


def test_atlas_query_without_sidecar(capsys, tmp_path):
    path = tmp_path / "missing.csv"
    path.write_text(",".join(atlas.FUEL_COLUMNS) + "\n")
    code, _, _ = run(capsys, "atlas-query", "--atlas", str(path), "--dL", "2.0", "--eta", "0.5")
    assert code == cli.EXIT_USAGE


def test_atlas_gen_time(capsys, tmp_path):
    out_path = tmp_path / "time.csv"
    code, out, _ = run(
        capsys, "atlas-gen", "--kind", "time", "--out", str(out_path),
        "--dL-min", "0.5", "--dL-max", "1.5", "--dL-step", "0.5",
    )
    assert code == cli.EXIT_OK
    report = json.loads(out)
    assert report["summary"]["converged"] == 3
    assert atlas.sidecar_path(out_path).exists()
    assert len(atlas.read_time_curve(out_path).table) == 3


def _report(passed):
    row = reference.compare("linear_delta_L", "linear", 0.44866 if passed else 0.45, 0.44866, 5e-4)
    return reference.ValidationReport(case="table2:1", kind="time", linear={}, nonlinear={}, comparisons=[row], passed=passed)


@pytest.mark.parametrize("passed, expected", [(True, cli.EXIT_OK), (False, cli.EXIT_SOLVER)])
def test_validate_exit_code(capsys, monkeypatch, passed, expected):
    monkeypatch.setattr(reference, "validate_case", lambda case_id: _report(passed))
    code, out, err = run(capsys, "validate", "--case", "table2:1")
    assert code == expected
    assert json.loads(out)["passed"] is passed
    if not passed:
        assert "table2:1:linear_delta_L" in err


def test_time_solve_reports_seed_source(capsys):
    code, out, _ = run(capsys, "time-solve", "--chi", "10")
    assert code == cli.EXIT_OK
    expected = timeopt.solve_time_optimal(timeopt.TimeOptProblem.from_chi(10.0)).seed_source
    assert json.loads(out)["solver"]["seed_source"] == expected


def test_fuel_solve_without_refine_has_no_nonlinear_block(capsys):
    code, out, _ = run(capsys, "fuel-solve", "--dL", "0.5", "--eta", "0.4")
    assert code == cli.EXIT_OK
    assert json.loads(out)["solution"]["nonlinear"] is None


@pytest.mark.slow
def test_fuel_solve_refined(capsys):
    code, out, _ = run(capsys, "fuel-solve", "--dL", "0.5", "--eta", "0.4", "--amax", "0.001", "--refine")
    assert code == cli.EXIT_OK
    refined = json.loads(out)["solution"]["nonlinear"]
    assert refined["lt"] == pytest.approx(10.21655, rel=1e-3)
    assert refined["J_norm"] == pytest.approx(0.61133, rel=1e-3)
    assert refined["epsilon_path"] == [0.01]
