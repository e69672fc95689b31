"""Propellant-optimal rephasing on the linearized dynamics.

The bang-bang throttle is smoothed with a hyperbolic tangent of the switching
function rho = 1 - |l0| D(L), which leaves a two-dimensional shooting problem
in (l0, l1) for a prescribed transfer length dL. The phase condition is set by
the slack parameter eta through chi = (1 - eta^2) chi_max(dL).

Convention: l0 > 0 with a negative phase (dt_f < 0); the other branch is the
mirror image (see ``mirror``).
"""
import math
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from rephase import linmodel, timeopt
from rephase.config import (
    ContinuationSettings,
    FuelSolverSettings,
    IntegratorSettings,
    RootSettings,
)
from rephase.errors import (
    ContinuationError,
    DomainError,
    InfeasibleProblemError,
    NonConvergenceError,
    RephaseError,
    SingularControlError,
)
from rephase.numerics import hybrid_solve, quad_adaptive

logger = logging.getLogger(__name__)

REGIMES = ("short", "long")
SCAN_POINTS = 2001
SCAN_POINTS_PER_RAD = 200


@lru_cache(maxsize=4096)
def exact_chi_max(delta_L: float) -> float:
    """chi on the time-optimal solution curve: the largest chi a transfer of dL can absorb."""
    chi, _ = timeopt.chi_of_delta_L(delta_L)
    return chi


def minimum_delta_L(chi: float) -> float:
    return timeopt.solve_time_optimal(timeopt.TimeOptProblem.from_chi(chi)).delta_L


@dataclass(frozen=True)
class FuelOptProblem:
    delta_L: float
    eta: float
    a_max: float = 1.0
    epsilon: float = 0.01
    sign_l0: float = 1.0

    def __post_init__(self):
        if not self.delta_L > 0:
            raise DomainError(f"delta_L must be positive, got {self.delta_L}")
        if not 0.0 < self.eta < 1.0:
            raise DomainError(f"eta must lie in (0, 1), got {self.eta}")
        if not self.a_max > 0:
            raise DomainError(f"a_max must be positive, got {self.a_max}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def chi_max(self) -> float:
        return exact_chi_max(self.delta_L)

    @property
    def chi(self) -> float:
        return (1.0 - self.eta**2) * self.chi_max

    @property
    def dt_f(self) -> float:
        return -self.sign_l0 * self.chi * self.a_max

    @classmethod
    def from_phase(cls, delta_L: float, dt_f: float, a_max: float, epsilon: float = 0.01) -> "FuelOptProblem":
        """Build the problem from a physical phase; raises InfeasibleProblemError if dL is too short."""
        if dt_f == 0:
            raise DomainError("A zero phase difference needs no transfer")
        if not a_max > 0:
            raise DomainError(f"a_max must be positive, got {a_max}")
        if not delta_L > 0:
            raise DomainError(f"delta_L must be positive, got {delta_L}")
        chi = abs(dt_f) / a_max
        cm = exact_chi_max(delta_L)
        if chi >= cm:
            dl_min = minimum_delta_L(chi)
            raise InfeasibleProblemError(
                f"dL={delta_L} is below the time-optimal minimum {dl_min:.10g} for chi={chi:.6g}",
                min_delta_L=dl_min,
            )
        return cls(
            delta_L=delta_L,
            eta=math.sqrt(1.0 - chi / cm),
            a_max=a_max,
            epsilon=epsilon,
            sign_l0=-math.copysign(1.0, dt_f),
        )


@dataclass(frozen=True)
class SwitchingProfile:
    roots: tuple = ()
    signs: tuple = ()

    @property
    def n_arcs(self) -> int:
        return sum(1 for s in self.signs if s < 0)


@dataclass(frozen=True)
class FuelOptSolution:
    delta_L: float
    eta: float
    a_max: float
    epsilon: float
    l0: float
    l1: float
    J: float
    n_arcs: int
    residual: float = 0.0
    iterations: int = 0
    seed_source: str = "caller"
    attempts: int = 1
    sign_l0: float = 1.0
    epsilon_path: tuple = field(default_factory=tuple)

    @property
    def problem(self) -> FuelOptProblem:
        return FuelOptProblem(self.delta_L, self.eta, self.a_max, self.epsilon, self.sign_l0)

    @property
    def J_norm(self) -> float:
        return self.J / (self.a_max * self.delta_L)

    @property
    def l0_times_dL(self) -> float:
        return self.l0 * self.delta_L

    @property
    def chi(self) -> float:
        return self.problem.chi


def switching_rho(L, l0: float, l1: float):
    return 1.0 - abs(l0) * linmodel.direction_denominator(L, l1)


def smoothed_magnitude(rho, epsilon: float, a_max: float):
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return 0.5 * a_max * (1.0 + np.tanh(-np.asarray(rho) / epsilon))


def _scan_grid(lo: float, hi: float, n_points: Optional[int] = None):
    n = n_points or max(SCAN_POINTS, int(SCAN_POINTS_PER_RAD * (hi - lo)))
    return np.linspace(lo, hi, n)


def _rho_roots(l0: float, l1: float, lo: float, hi: float, n_points: Optional[int] = None) -> list:
    """Roots of rho in [lo, hi] from a sign scan refined by Brent's method."""
    grid = _scan_grid(lo, hi, n_points)
    rho = switching_rho(grid, l0, l1)
    negative = rho < 0
    roots = []
    for i in np.flatnonzero(negative[:-1] != negative[1:]):
        a, b = grid[i], grid[i + 1]
        if rho[i] == 0.0:
            roots.append(float(a))
            continue
        roots.append(brentq(lambda L: switching_rho(L, l0, l1), a, b, xtol=1e-15, rtol=1e-15))
    return roots


def count_burn_arcs(l0: float, l1: float, delta_L: float, n_points: Optional[int] = None):
    """Number of maximal rho < 0 intervals over the transfer and the switching profile."""
    half = 0.5 * delta_L
    roots = [r for r in _rho_roots(l0, l1, -half, half, n_points) if -half < r < half]
    edges = [-half] + roots + [half]
    signs = []
    for a, b in zip(edges[:-1], edges[1:]):
        signs.append(-1 if switching_rho(0.5 * (a + b), l0, l1) < 0 else 1)
    profile = SwitchingProfile(roots=tuple(roots), signs=tuple(signs))
    return profile.n_arcs, profile


def _half_points(l0, l1, problem: FuelOptProblem, settings: FuelSolverSettings):
    if problem.epsilon > settings.switch_subdivision_eps:
        return ()
    return tuple(r for r in _rho_roots(l0, l1, 0.0, 0.5 * problem.delta_L) if r > 0.0)


def _throttle(L, l0, l1, epsilon):
    """a / a_max."""
    return 0.5 * (1.0 + math.tanh(-float(switching_rho(L, l0, l1)) / epsilon))


def fuel_residual(l0: float, l1: float, problem: FuelOptProblem, settings: Optional[FuelSolverSettings] = None) -> np.ndarray:
    """[dg(Lf)/a_max, (|dt(Lf)|/a_max - chi) / max(1, chi)]; both integrands are even in L."""
    settings = settings or FuelSolverSettings()
    half = 0.5 * problem.delta_L
    points = _half_points(l0, l1, problem, settings)
    eps = problem.epsilon

    def g_term(L):
        s, c = math.sin(L), math.cos(L)
        n1 = 6.0 * L * s + 2.0 * c - l1 - 3.0 * l1 * s * s
        return _throttle(L, l0, l1, eps) * n1 / float(linmodel.direction_denominator(L, l1))

    def t_term(L):
        s, c = math.sin(L), math.cos(L)
        n2 = 9.0 * L * L + 4.0 - 6.0 * l1 * L * s - 2.0 * l1 * c
        return _throttle(L, l0, l1, eps) * n2 / float(linmodel.direction_denominator(L, l1))

    r1 = 2.0 * quad_adaptive(g_term, 0.0, half, settings.quad_tol, points)
    r2 = (2.0 * quad_adaptive(t_term, 0.0, half, settings.quad_tol, points) - problem.chi) / max(1.0, problem.chi)
    return np.array([r1, r2])


def fuel_cost(l0: float, l1: float, problem: FuelOptProblem, settings: Optional[FuelSolverSettings] = None) -> float:
    """J = integral of the thrust magnitude over the transfer."""
    settings = settings or FuelSolverSettings()
    points = _half_points(l0, l1, problem, settings)
    half_J = quad_adaptive(
        lambda L: _throttle(L, l0, l1, problem.epsilon), 0.0, 0.5 * problem.delta_L, settings.quad_tol, points
    )
    return 2.0 * problem.a_max * half_J


def analytic_fuel_estimate(delta_L: float, eta: float, regime: str, a_max: float = 1.0):
    """(l0, l1, J) from the short- or long-transfer asymptotics.

    l0 comes from placing the switches at L = +-eta*dL/2.
    """
    if regime not in REGIMES:
        raise DomainError(f"regime must be one of {REGIMES}, got {regime!r}")
    if not 0.0 < eta < 1.0:
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    if not delta_L > 0:
        raise DomainError(f"delta_L must be positive, got {delta_L}")
    J = (1.0 - eta) * a_max * delta_L
    if regime == "short":
        return 2.0 / (eta * delta_L), 2.0, J
    return 2.0 / (3.0 * eta * delta_L), timeopt.solve_lambda1(delta_L), J


def _candidate_seeds(problem: FuelOptProblem, seed, atlas_grid, settings: FuelSolverSettings, seed_only: bool = False):
    if seed is not None:
        yield "caller", tuple(seed)
    if seed_only:
        return
    if atlas_grid is not None:
        from rephase.atlas import interpolate_seed

        for candidate in interpolate_seed(atlas_grid, problem.delta_L, problem.eta):
            yield f"atlas:{candidate.source}", (candidate.l0, candidate.l1)
    regimes = ("short", "long") if problem.delta_L < 4.0 else ("long", "short")
    for regime in regimes:
        try:
            l0, l1, _ = analytic_fuel_estimate(problem.delta_L, problem.eta, regime)
        except RephaseError as exc:
            logger.debug("analytic %s seed unavailable: %s", regime, exc)
            continue
        yield f"analytic-{regime}", (l0, l1)
    rng = np.random.default_rng(settings.seed)
    lo, hi = settings.l1_range
    for _ in range(settings.retry_budget):
        yield "random", (rng.uniform(0.0, settings.l0_range_factor / problem.delta_L), rng.uniform(lo, hi))


def solve_fuel_optimal(
    problem: FuelOptProblem,
    seed: Optional[Sequence[float]] = None,
    atlas_grid=None,
    settings: Optional[FuelSolverSettings] = None,
    seed_only: bool = False,
) -> FuelOptSolution:
    """Solve the smoothed shooting problem trying seeds in priority order.

    Seeds: the caller's, then atlas candidates, then the analytic estimates,
    then random draws from a seeded generator (``retry_budget`` of them).
    With ``seed_only`` the caller's seed is the only attempt.
    """
    if seed_only and seed is None:
        raise DomainError("seed_only needs a caller seed")
    settings = settings or FuelSolverSettings()
    root_settings = RootSettings(residual_tol=settings.residual_tol)
    history = []
    attempt = 0
    for source, (l0_seed, l1_seed) in _candidate_seeds(problem, seed, atlas_grid, settings, seed_only):
        attempt += 1
        try:
            result = hybrid_solve(
                lambda z: fuel_residual(z[0], z[1], problem, settings),
                [l0_seed, l1_seed],
                settings=root_settings,
            )
        except RephaseError as exc:
            logger.debug("fuel attempt %d (%s) from (%.6g, %.6g) failed: %s", attempt, source, l0_seed, l1_seed, exc)
            history.append(f"{source} ({l0_seed:.6g}, {l1_seed:.6g}): {exc}")
            continue
        l0, l1 = abs(float(result.x[0])), float(result.x[1])
        n_arcs, _ = count_burn_arcs(l0, l1, problem.delta_L)
        J = fuel_cost(l0, l1, problem, settings)
        logger.info(
            "fuel-optimal dL=%g eta=%g eps=%g -> l0=%.10g l1=%.10g J/(a dL)=%.6f (%s, attempt %d)",
            problem.delta_L, problem.eta, problem.epsilon, l0, l1, J / (problem.a_max * problem.delta_L), source, attempt,
        )
        return FuelOptSolution(
            delta_L=problem.delta_L,
            eta=problem.eta,
            a_max=problem.a_max,
            epsilon=problem.epsilon,
            l0=l0,
            l1=l1,
            J=J,
            n_arcs=n_arcs,
            residual=result.residual,
            iterations=result.iterations,
            seed_source=source,
            attempts=attempt,
            sign_l0=problem.sign_l0,
            epsilon_path=(problem.epsilon,),
        )
    logger.warning("fuel-optimal dL=%g eta=%g failed after %d attempts", problem.delta_L, problem.eta, attempt)
    raise NonConvergenceError(
        f"Fuel-optimal solve for dL={problem.delta_L}, eta={problem.eta} failed after {attempt} attempts",
        history=history,
    )


def continue_epsilon(
    solution: FuelOptSolution,
    epsilon_target: Optional[float] = None,
    schedule: Optional[ContinuationSettings] = None,
    settings: Optional[FuelSolverSettings] = None,
    max_refinements: int = 3,
) -> FuelOptSolution:
    """Walk epsilon down geometrically, warm-starting each solve from the previous one.

    Each step tries only the previous solution as a seed so the branch is kept.
    A failed step is retried from the last good solution with the step
    shortened geometrically, ``max_refinements`` times.
    """
    schedule = schedule or ContinuationSettings()
    settings = settings or FuelSolverSettings()
    target = schedule.epsilon_target if epsilon_target is None else epsilon_target
    if not target > 0:
        raise DomainError(f"epsilon_target must be positive, got {target}")

    current = solution
    path = list(solution.epsilon_path or (solution.epsilon,))
    while current.epsilon > target * (1.0 + 1e-12):
        step = schedule.factor
        for _ in range(max_refinements + 1):
            eps = max(current.epsilon / step, target)
            problem = replace(current.problem, epsilon=eps)
            try:
                nxt = solve_fuel_optimal(problem, seed=(current.l0, current.l1), settings=settings, seed_only=True)
                break
            except RephaseError as exc:
                logger.warning("continuation step %g -> %g failed: %s", current.epsilon, eps, exc)
                step = math.sqrt(step)
        else:
            raise ContinuationError(
                f"Continuation stalled at epsilon={current.epsilon:g} (target {target:g})",
                last_solution=current,
                last_epsilon=current.epsilon,
            )
        path.append(eps)
        current = replace(nxt, epsilon_path=tuple(path), seed_source=solution.seed_source)
    return current


def mirror(solution: FuelOptSolution) -> FuelOptSolution:
    return replace(solution, sign_l0=-solution.sign_l0)


def control(solution: FuelOptSolution):
    def control_fn(L):
        magnitude = float(smoothed_magnitude(switching_rho(L, solution.l0, solution.l1), solution.epsilon, solution.a_max))
        try:
            u_r, u_th = linmodel.unit_control_direction(L, solution.l1, solution.sign_l0)
        except SingularControlError:
            # rho = 1 there, so the engine is off up to tanh saturation
            if magnitude < 1e-12 * solution.a_max:
                return linmodel.ControlLVLH(0.0, 0.0)
            raise
        return linmodel.ControlLVLH(magnitude * u_r, magnitude * u_th)

    return control_fn


def propagate(solution: FuelOptSolution, settings: Optional[IntegratorSettings] = None):
    _, profile = count_burn_arcs(solution.l0, solution.l1, solution.delta_L)
    return linmodel.propagate(solution.delta_L, control(solution), settings, breakpoints=profile.roots + (0.0,))


def boundary_residuals(solution: FuelOptSolution, settings: Optional[IntegratorSettings] = None) -> dict:
    traj = propagate(solution, settings)
    dp, df, dg, dt, dt_reduced = traj.y_final
    return {
        "dp": float(dp),
        "df": float(df),
        "dg": float(dg),
        "dt_error": float(dt - solution.problem.dt_f),
        "dt_reduced_error": float(dt_reduced - dt),
    }


def control_profile(
    solution: FuelOptSolution,
    n_points: int = 401,
    settings: Optional[IntegratorSettings] = None,
) -> pd.DataFrame:
    traj = propagate(solution, settings)
    control_fn = control(solution)
    dt_f = solution.problem.dt_f
    rows = []
    for L in np.linspace(-0.5 * solution.delta_L, 0.5 * solution.delta_L, n_points):
        ctrl = control_fn(L)
        dp, df, dg, dt, _ = traj(L)
        x, y = linmodel.relative_position((dp, df, dg, dt), L, dt_f)
        rows.append({
            "L": L,
            "a_r": ctrl.a_r,
            "a_th": ctrl.a_th,
            "gamma_deg": math.degrees(ctrl.gamma),
            "dp": dp,
            "df": df,
            "dg": dg,
            "dt": dt,
            "x": x,
            "y": y,
            "magnitude": ctrl.magnitude,
            "rho": float(switching_rho(L, solution.l0, solution.l1)),
        })
    return pd.DataFrame(rows)
