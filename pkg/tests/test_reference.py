import pytest

from rephase import fuelopt, nonlinear, reference
from rephase.errors import DomainError, NonConvergenceError, ValidationStageError

CASE_IDS = {"table2:1", "table2:2s1", "table2:2s2", "table2:2s3", "table2:3", "table4:1", "table4:2", "table4:3"}


def test_cases_load():
    cases = reference.load_cases()
    assert set(cases) == CASE_IDS
    assert {case.kind for case in cases.values()} == {"time", "fuel"}
    for case in cases.values():
        assert len(case.linear.lx) == 3
        if case.kind == "fuel":
            assert 0 < case.eta < 1
            assert case.epsilon == 0.01


def test_case_lookup():
    case = reference.get_case("table2:1")
    assert case.chi == pytest.approx(-case.dt_f / case.a_max)
    with pytest.raises(DomainError, match="table2:1"):
        reference.get_case("table9:9")


def test_compare():
    row = reference.compare("J_norm", "linear", 0.6112, 0.61117, 1e-3, relative=True)
    assert row.passed
    row = reference.compare("delta_L", "linear", 0.45, 0.44866, 5e-4)
    assert not row.passed


def test_stage_failure_is_named(monkeypatch):
    def fail(*args, **kwargs):
        raise NonConvergenceError("stalled", residual=1.0)

    monkeypatch.setattr(nonlinear, "solve_nonlinear", fail)
    with pytest.raises(ValidationStageError) as info:
        reference.validate_case("table2:1")
    assert info.value.stage == "nonlinear"


@pytest.mark.slow
def test_short_time_case():
    report = reference.validate_case("table2:1")
    linear_rows = [row for row in report.comparisons if row.stage == "linear"]
    assert len(linear_rows) == 4
    assert all(row.passed for row in linear_rows)
    assert report.nonlinear["delta_L"] > report.linear["delta_L"]
    assert report.passed


@pytest.mark.slow
def test_short_fuel_case():
    report = reference.validate_case("table4:1")
    by_name = {row.quantity: row for row in report.comparisons}
    assert by_name["dt_f"].passed
    assert by_name["linear_lt"].passed
    assert by_name["linear_J_norm"].passed
    assert by_name["n_arcs"].passed
    assert by_name["n_arcs"].stage == "continuation"
    assert by_name["optimal_J_norm"].passed
    assert report.optimal["epsilon"] == pytest.approx(1e-6)
    assert report.passed


def test_arc_count_comes_from_the_continued_solution(monkeypatch):
    def smooth(kind, dt_f, a_max, guess, epsilon=None, settings=None, integrator=None):
        return nonlinear.NonlinearSolution(
            kind=kind, costates=guess.costates, delta_L=guess.delta_L, dt_f=dt_f, a_max=a_max, epsilon=epsilon,
            J=0.0, residual=0.0, iterations=0, lt_drift=0.0,
        )

    def stall(*args, **kwargs):
        raise NonConvergenceError("stalled", residual=1.0)

    monkeypatch.setattr(nonlinear, "solve_nonlinear", smooth)
    monkeypatch.setattr(fuelopt, "continue_epsilon", stall)
    with pytest.raises(ValidationStageError) as info:
        reference.validate_case("table4:1")
    assert info.value.stage == "continuation"


@pytest.mark.slow
@pytest.mark.parametrize("case_id", ["table2:2s1", "table2:2s2", "table2:3"])
def test_longer_time_cases(case_id):
    report = reference.validate_case(case_id)
    failed = [row.quantity for row in report.comparisons if not row.passed]
    assert failed == []
