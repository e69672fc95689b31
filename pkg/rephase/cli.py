"""Command-line front end: solution JSON on stdout, plot data as CSV files."""
import sys
import json
import time
import argparse
import logging
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from rephase import atlas, config, fuelopt, linmodel, nonlinear, reference, timeopt
from rephase.config import FuelSolverSettings, IntegratorSettings, RootSettings
from rephase.errors import (
    SOLVER_ERRORS,
    AtlasFormatError,
    DomainError,
    InfeasibleProblemError,
    NonConvergenceError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_INFEASIBLE = 3

REPORT_RESIDUAL_TOL = 1e-9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class SolutionReport(BaseModel):
    command: str
    version: str
    seed: int
    settings: dict
    problem: dict
    solver: dict
    solution: dict
    timing_s: float


def _emit(payload: dict, output: Optional[str]):
    text = json.dumps(payload, indent=2)
    if output:
        Path(output).write_text(text + "\n", encoding="utf-8")
        logger.info("wrote %s", output)
    else:
        print(text)


def _write_profile(df, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=atlas.FLOAT_FORMAT)
    logger.info("wrote profile %s (%d rows)", path, len(df))


def _check_residual(residual: float, what: str):
    if residual > REPORT_RESIDUAL_TOL:
        raise NonConvergenceError(f"{what} residual {residual:.3e} exceeds {REPORT_RESIDUAL_TOL:g}", residual=residual)


def _base_settings(args) -> dict:
    return {
        "root": RootSettings().model_dump(),
        "integrator": IntegratorSettings().model_dump(),
        "fuel": FuelSolverSettings(seed=args.seed).model_dump(),
    }


# --- Commands -------------------------------------------------------------------

def cmd_time_solve(args) -> int:
    started = time.perf_counter()
    if args.chi is not None:
        if args.amax is not None:
            raise UsageError("--amax goes with --dtf, not --chi")
        problem = timeopt.TimeOptProblem.from_chi(args.chi)
    else:
        if args.amax is None:
            raise UsageError("--dtf needs --amax")
        problem = timeopt.TimeOptProblem.from_phase(args.dtf, args.amax)

    sol = timeopt.solve_time_optimal(problem, strategy=args.strategy)
    # dg(Lf) = 0 and dt(Lf) = dt_f, in units of a_max
    _check_residual(sol.residual, "time-optimal")

    lx = linmodel.costates_at(-0.5 * sol.delta_L, sol.sign_l0, sol.l1)
    report = SolutionReport(
        command="time-solve",
        version=config.code_version(),
        seed=args.seed,
        settings=_base_settings(args),
        problem={"chi": problem.chi, "dt_f": problem.dt_f, "a_max": problem.a_max},
        solver={
            "strategy": sol.strategy,
            "iterations": sol.iterations,
            "attempts": sol.attempts,
            "residual": sol.residual,
            "seed_source": sol.seed_source,
        },
        solution={
            "delta_L": sol.delta_L,
            "l1": sol.l1,
            "sign_l0": sol.sign_l0,
            "chi": sol.chi,
            "tof": sol.tof,
            "l0_magnitude": sol.l0_magnitude,
            "lx_at_L0": [lx.l_dp, lx.l_df, lx.l_dg],
            "approx_delta_L": timeopt.approx_deltaL(sol.chi),
        },
        timing_s=time.perf_counter() - started,
    )
    if args.profile:
        _write_profile(timeopt.control_profile(sol, n_points=args.points), args.profile)
    _emit(report.model_dump(), args.output)
    return EXIT_OK


def cmd_fuel_solve(args) -> int:
    started = time.perf_counter()
    if args.eta is not None:
        if args.dtf is not None:
            raise UsageError("Give either --eta or --dtf, not both")
        problem = fuelopt.FuelOptProblem(delta_L=args.dL, eta=args.eta, a_max=args.amax, epsilon=args.eps)
    elif args.dtf is not None:
        problem = fuelopt.FuelOptProblem.from_phase(args.dL, args.dtf, args.amax, epsilon=args.eps)
    else:
        raise UsageError("fuel-solve needs --eta or --dtf")

    grid = atlas.read_atlas(args.atlas) if args.atlas else None
    settings = FuelSolverSettings(seed=args.seed)
    sol = fuelopt.solve_fuel_optimal(problem, atlas_grid=grid, settings=settings)
    refined = _refine(sol, args.continue_to) if args.refine else None
    if args.continue_to is not None:
        sol = fuelopt.continue_epsilon(sol, args.continue_to, settings=settings)
    _check_residual(sol.residual, "fuel-optimal")

    lx = linmodel.costates_at(-0.5 * sol.delta_L, sol.sign_l0 * sol.l0, sol.l1)
    report = SolutionReport(
        command="fuel-solve",
        version=config.code_version(),
        seed=args.seed,
        settings=_base_settings(args),
        problem={
            "delta_L": problem.delta_L,
            "eta": problem.eta,
            "a_max": problem.a_max,
            "epsilon": problem.epsilon,
            "chi": problem.chi,
            "chi_max": problem.chi_max,
            "dt_f": problem.dt_f,
        },
        solver={
            "seed_source": sol.seed_source,
            "attempts": sol.attempts,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "atlas": args.atlas,
        },
        solution={
            "l0": sol.l0,
            "l1": sol.l1,
            "J": sol.J,
            "J_norm": sol.J_norm,
            "n_arcs": sol.n_arcs,
            "epsilon_path": list(sol.epsilon_path),
            "lx_at_L0": [lx.l_dp, lx.l_df, lx.l_dg],
            "lt": sol.sign_l0 * sol.l0,
            "nonlinear": refined,
        },
        timing_s=time.perf_counter() - started,
    )
    if args.profile:
        _write_profile(fuelopt.control_profile(sol, n_points=args.points), args.profile)
    _emit(report.model_dump(), args.output)
    return EXIT_OK


def _refine(lin, continue_to) -> dict:
    """Nonlinear shooting from the mapped linear costates, continued down to continue_to when given."""
    guess = nonlinear.map_linear_costates(lin)
    nl = nonlinear.solve_nonlinear("fuel", lin.problem.dt_f, lin.a_max, guess, epsilon=lin.epsilon)
    if continue_to is not None:
        nl = nonlinear.continue_nonlinear(nl, continue_to)
    _check_residual(nl.residual, "nonlinear fuel-optimal")
    return {
        "lx_at_L0": list(nl.costates.lx),
        "lt": nl.costates.lt,
        "J_norm": nl.J_norm,
        "epsilon_path": list(nl.epsilon_path),
        "residual": nl.residual,
        "iterations": nl.iterations,
        "lt_drift": nl.lt_drift,
    }


def cmd_atlas_gen(args) -> int:
    started = time.perf_counter()
    if args.kind == "time":
        curve = atlas.generate_time_atlas(args.dL_min, args.dL_max, args.dL_step, jobs=args.jobs, progress=args.progress)
        atlas.write_time_curve(curve, args.out)
        summary = curve.meta["summary"]
    else:
        grid = atlas.generate_fuel_atlas(
            atlas.axis(args.dL_min, args.dL_max, args.dL_step),
            atlas.axis(args.eta_min, args.eta_max, args.eta_step),
            args.eps,
            jobs=args.jobs,
            settings=FuelSolverSettings(seed=args.seed),
            progress=args.progress,
        )
        atlas.write_atlas(grid, args.out)
        summary = grid.meta["summary"]
    _emit(
        {
            "command": "atlas-gen",
            "kind": args.kind,
            "out": str(args.out),
            "sidecar": str(atlas.sidecar_path(args.out)),
            "summary": summary,
            "version": config.code_version(),
            "seed": args.seed,
            "timing_s": time.perf_counter() - started,
        },
        args.output,
    )
    return EXIT_OK


def cmd_atlas_query(args) -> int:
    grid = atlas.read_atlas(args.atlas)
    candidates = atlas.interpolate_seed(grid, args.dL, args.eta)
    _emit(
        {
            "command": "atlas-query",
            "dL": args.dL,
            "eta": args.eta,
            "candidates": [{"l0": c.l0, "l1": c.l1, "source": c.source} for c in candidates],
            "J_norm": atlas.interpolate_J_norm(grid, args.dL, args.eta),
            "epsilon": grid.meta.get("epsilon"),
        },
        args.output,
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    case_ids = sorted(reference.load_cases()) if args.all else [args.case]
    reports = [reference.validate_case(case_id).model_dump() for case_id in case_ids]
    passed = all(r["passed"] for r in reports)
    _emit(
        {
            "command": "validate",
            "version": config.code_version(),
            "reports": reports,
            "passed": passed,
        },
        args.output,
    )
    if not passed:
        failed = [f"{r['case']}:{row['quantity']}" for r in reports for row in r["comparisons"] if not row["passed"]]
        print(f"rephase: validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# --- Parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rephase", description="Time- and propellant-optimal low-thrust rephasing")
    parser.add_argument("--seed", type=int, default=config.SEED, help="RNG seed for random costate retries (env REPHASE_SEED)")
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    parser.add_argument("--output", "-o", help="Write the JSON report to this file instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("time-solve", help="Minimum-time rephasing on the linear model")
    form = p.add_mutually_exclusive_group(required=True)
    form.add_argument("--chi", type=float)
    form.add_argument("--dtf", type=float, help="Phase difference (canonical)")
    p.add_argument("--amax", type=float, help="Thrust acceleration (canonical)")
    p.add_argument("--strategy", choices=timeopt.STRATEGIES, default="double-loop")
    p.add_argument("--profile", help="Write the control profile CSV here")
    p.add_argument("--points", type=int, default=401)
    p.set_defaults(handler=cmd_time_solve)

    p = sub.add_parser("fuel-solve", help="Minimum-propellant rephasing on the linear model")
    p.add_argument("--dL", type=float, required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--dtf", type=float, help="Phase difference; eta follows from chi_max(dL)")
    p.add_argument("--amax", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--continue-to", type=float, dest="continue_to")
    p.add_argument("--refine", action="store_true", help="Also solve on the nonlinear dynamics from the mapped costates")
    p.add_argument("--atlas", default=config.ATLAS_PATH, help="Fuel atlas CSV used for seeds (env REPHASE_ATLAS_PATH)")
    p.add_argument("--profile")
    p.add_argument("--points", type=int, default=401)
    p.set_defaults(handler=cmd_fuel_solve)

    p = sub.add_parser("atlas-gen", help="Generate a time curve or a fuel atlas")
    p.add_argument("--kind", choices=("time", "fuel"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dL-min", type=float, dest="dL_min")
    p.add_argument("--dL-max", type=float, dest="dL_max")
    p.add_argument("--dL-step", type=float, dest="dL_step")
    p.add_argument("--eta-min", type=float, dest="eta_min", default=config.DESK_ETA_AXIS[0])
    p.add_argument("--eta-max", type=float, dest="eta_max", default=config.DESK_ETA_AXIS[1])
    p.add_argument("--eta-step", type=float, dest="eta_step", default=config.DESK_ETA_AXIS[2])
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=config.JOBS)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_atlas_gen)

    p = sub.add_parser("atlas-query", help="Seed candidates from a fuel atlas")
    p.add_argument("--atlas", required=True)
    p.add_argument("--dL", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.set_defaults(handler=cmd_atlas_query)

    p = sub.add_parser("validate", help="Linear -> nonlinear pipeline on a reference case")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--case", choices=sorted(reference.load_cases()))
    which.add_argument("--all", action="store_true")
    p.set_defaults(handler=cmd_validate)
    return parser


def _fill_grid_defaults(args):
    if args.command != "atlas-gen":
        return
    lo, hi, step = (
        (config.TIME_SWEEP_MIN, config.TIME_SWEEP_MAX, config.TIME_SWEEP_STEP)
        if args.kind == "time"
        else config.DESK_DL_AXIS
    )
    args.dL_min = lo if args.dL_min is None else args.dL_min
    args.dL_max = hi if args.dL_max is None else args.dL_max
    args.dL_step = step if args.dL_step is None else args.dL_step


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rephase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config.setup_logging(args.log_level)
    _fill_grid_defaults(args)

    try:
        return args.handler(args)
    except (UsageError, DomainError, AtlasFormatError, OSError) as exc:
        print(f"rephase: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleProblemError as exc:
        print(f"rephase: infeasible: {exc} (minimum dL = {exc.min_delta_L:.10g})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SOLVER_ERRORS as exc:
        detail = ""
        if getattr(exc, "stage", None):
            detail += f" [stage: {exc.stage}]"
        if getattr(exc, "residual", None) is not None:
            detail += f" [residual: {exc.residual:.3e}]"
        print(f"rephase: solver failure: {exc}{detail}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
