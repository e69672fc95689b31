"""Published reference cases and the linear -> nonlinear validation pipeline."""
import json
import logging
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Optional

from pydantic import BaseModel

from rephase import fuelopt, nonlinear, timeopt
from rephase.errors import DomainError, RephaseError, ValidationStageError

logger = logging.getLogger(__name__)

DT_F_TABLE_TOL = 2e-3  # the printed phases carry three significant digits
BANG_BANG_EPSILON = 1e-6


class ReferenceRow(BaseModel):
    lx: List[float]
    delta_L: Optional[float] = None
    lt: Optional[float] = None
    J_norm: Optional[float] = None


class ExpectedError(BaseModel):
    value: float
    tolerance: float


class ReferenceCase(BaseModel):
    id: str
    kind: str
    description: str = ""
    a_max: float
    dt_f: float
    chi: Optional[float] = None
    delta_L: Optional[float] = None
    eta: Optional[float] = None
    epsilon: Optional[float] = None
    n_arcs: Optional[int] = None
    linear: ReferenceRow
    nonlinear: ReferenceRow
    optimal: Optional[ReferenceRow] = None
    delta_L_error: Optional[ExpectedError] = None
    tolerances: Dict[str, float]


class ComparisonRow(BaseModel):
    quantity: str
    stage: str
    computed: float
    reference: float
    tolerance: float
    relative: bool = False
    passed: bool


class ValidationReport(BaseModel):
    case: str
    kind: str
    linear: dict
    nonlinear: dict
    optimal: Optional[dict] = None
    comparisons: List[ComparisonRow]
    passed: bool


@lru_cache(maxsize=1)
def load_cases() -> Dict[str, ReferenceCase]:
    text = resources.files("rephase").joinpath("data/reference_cases.json").read_text(encoding="utf-8")
    raw = json.loads(text)
    return {case_id: ReferenceCase(id=case_id, **body) for case_id, body in raw["cases"].items()}


def get_case(case_id: str) -> ReferenceCase:
    cases = load_cases()
    if case_id not in cases:
        raise DomainError(f"Unknown case {case_id!r}; known cases: {', '.join(sorted(cases))}")
    return cases[case_id]


def compare(quantity, stage, computed, reference, tolerance, relative=False) -> ComparisonRow:
    error = abs(computed - reference)
    if relative:
        error /= abs(reference)
    return ComparisonRow(
        quantity=quantity,
        stage=stage,
        computed=float(computed),
        reference=float(reference),
        tolerance=tolerance,
        relative=relative,
        passed=bool(error <= tolerance),
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except RephaseError as exc:
        raise ValidationStageError(f"Stage '{name}' failed: {exc}", stage=name) from exc


def _lx_rows(stage, computed, reference, tol):
    return [
        compare(f"{stage}_l_{name}", stage, c, r, tol)
        for name, c, r in zip(("p", "f", "g"), computed, reference)
    ]


def _validate_time(case: ReferenceCase) -> ValidationReport:
    tol = case.tolerances
    lin = _stage("linear", timeopt.solve_time_optimal, timeopt.TimeOptProblem.from_phase(case.dt_f, case.a_max))
    guess = _stage("map", nonlinear.map_linear_costates, lin)
    nl = _stage("nonlinear", nonlinear.solve_nonlinear, "time", case.dt_f, case.a_max, guess)

    rows = [compare("linear_delta_L", "linear", lin.delta_L, case.linear.delta_L, tol["linear_delta_L"])]
    rows += _lx_rows("linear", guess.costates.lx, case.linear.lx, tol["linear_lx"])
    rows.append(compare("nonlinear_delta_L", "nonlinear", nl.delta_L, case.nonlinear.delta_L, tol["nonlinear_delta_L_rel"], relative=True))
    rows += _lx_rows("nonlinear", nl.costates.lx, case.nonlinear.lx, tol["nonlinear_lx"])
    dL_error = abs(nl.delta_L - lin.delta_L) / nl.delta_L
    if case.delta_L_error is not None:
        rows.append(compare("delta_L_error", "comparison", dL_error, case.delta_L_error.value, case.delta_L_error.tolerance))

    return ValidationReport(
        case=case.id,
        kind=case.kind,
        linear={"delta_L": lin.delta_L, "l1": lin.l1, "lx": list(guess.costates.lx), "iterations": lin.iterations},
        nonlinear={
            "delta_L": nl.delta_L,
            "lx": list(nl.costates.lx),
            "lt": nl.costates.lt,
            "residual": nl.residual,
            "iterations": nl.iterations,
            "delta_L_error": dL_error,
        },
        comparisons=rows,
        passed=all(r.passed for r in rows),
    )


def _validate_fuel(case: ReferenceCase) -> ValidationReport:
    tol = case.tolerances
    problem = fuelopt.FuelOptProblem(delta_L=case.delta_L, eta=case.eta, a_max=case.a_max, epsilon=case.epsilon)
    lin = _stage("linear", fuelopt.solve_fuel_optimal, problem)
    guess = _stage("map", nonlinear.map_linear_costates, lin)
    nl = _stage("nonlinear", nonlinear.solve_nonlinear, "fuel", problem.dt_f, case.a_max, guess, epsilon=case.epsilon)

    rows = [
        compare("dt_f", "linear", problem.dt_f, case.dt_f, DT_F_TABLE_TOL, relative=True),
        compare("linear_lt", "linear", lin.l0, case.linear.lt, tol["linear_lt_rel"], relative=True),
        compare("linear_J_norm", "linear", lin.J_norm, case.linear.J_norm, tol["linear_J_norm_rel"], relative=True),
    ]
    rows += _lx_rows("linear", guess.costates.lx, case.linear.lx, tol["linear_lx"])
    rows += [
        compare("nonlinear_lt", "nonlinear", nl.costates.lt, case.nonlinear.lt, tol["nonlinear_lt_rel"], relative=True),
        compare("nonlinear_J_norm", "nonlinear", nl.J_norm, case.nonlinear.J_norm, tol["nonlinear_J_norm_rel"], relative=True),
    ]

    # burn arcs are counted on the bang-bang limit; smoothing merges short coasts
    bang = None
    if case.n_arcs is not None:
        bang = _stage("continuation", fuelopt.continue_epsilon, lin, BANG_BANG_EPSILON)
        rows.append(compare("n_arcs", "continuation", bang.n_arcs, case.n_arcs, 0))
    optimal = None
    if case.optimal is not None:
        opt = _stage("continuation", nonlinear.continue_nonlinear, nl, BANG_BANG_EPSILON)
        rows += [
            compare("optimal_lt", "continuation", opt.costates.lt, case.optimal.lt, tol["optimal_lt_rel"], relative=True),
            compare("optimal_J_norm", "continuation", opt.J_norm, case.optimal.J_norm, tol["optimal_J_norm_rel"], relative=True),
        ]
        rows += _lx_rows("optimal", opt.costates.lx, case.optimal.lx, tol["optimal_lx"])
        optimal = {
            "lx": list(opt.costates.lx),
            "lt": opt.costates.lt,
            "J_norm": opt.J_norm,
            "epsilon": opt.epsilon,
            "epsilon_path": list(opt.epsilon_path),
            "residual": opt.residual,
            "linear_n_arcs": None if bang is None else bang.n_arcs,
        }

    return ValidationReport(
        case=case.id,
        kind=case.kind,
        linear={
            "l0": lin.l0,
            "l1": lin.l1,
            "J_norm": lin.J_norm,
            "n_arcs": lin.n_arcs,
            "lx": list(guess.costates.lx),
            "dt_f": problem.dt_f,
            "iterations": lin.iterations,
        },
        nonlinear={
            "lx": list(nl.costates.lx),
            "lt": nl.costates.lt,
            "J_norm": nl.J_norm,
            "residual": nl.residual,
            "iterations": nl.iterations,
            "lt_drift": nl.lt_drift,
        },
        optimal=optimal,
        comparisons=rows,
        passed=all(r.passed for r in rows),
    )


def validate_case(case_id: str) -> ValidationReport:
    """Linear solve, costate map and nonlinear refinement for one reference case."""
    case = get_case(case_id)
    logger.info("validating %s (%s)", case.id, case.description)
    report = _validate_time(case) if case.kind == "time" else _validate_fuel(case)
    logger.info("%s: %s", case.id, "pass" if report.passed else "FAIL")
    return report
