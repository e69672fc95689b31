"""Time-optimal rephasing on the linearized dynamics.

The problem reduces to two shooting variables (dL, l1) driven by the single
key parameter chi = -sign(l0) * dt_f / a_max:

    f1(dL, l1) = 0          (dg(Lf) = 0)
    f2(dL, l1) = chi        (dt(Lf) = dt_f)

Both functions are half-interval integrals over [0, dL/2] thanks to the
even/odd symmetry of the optimal control.
"""
import sys
import math
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import bisect, brentq

from rephase import linmodel
from rephase.config import IntegratorSettings, RootSettings, TIME_SWEEP_MAX
from rephase.errors import DomainError, NonConvergenceError, RephaseError
from rephase.numerics import hybrid_solve, newton_scalar, quad_adaptive

logger = logging.getLogger(__name__)

QUAD_TOL = 1e-13
# the integrand numerators cancel O(1) terms, so f1 and f2 carry absolute noise of a few ulp
QUAD_NOISE_FLOOR = 1e3 * sys.float_info.epsilon
RESIDUAL_FLOOR = 1e4 * sys.float_info.epsilon
TRUST_FACTOR = 1.0
STRATEGIES = ("double-loop", "hybrid2d")
MAX_ATTEMPTS = 3

# Fourier fit of l1(dL), split at dL = 10
_L1_SHORT = dict(c0=-19.34, c=(22.5, 1.261, -2.419), d=(23.9, -14.18, 1.54), n=0.1699)
_L1_LONG = dict(c0=1.302, c=(-0.9269, -0.3164, -0.09964), d=(0.02194, 0.01196, 0.005974), n=0.4999)
L1_FIT_SPLIT = 10.0

# Rational fit of dL(chi) on the middle branch
P1, P2, P3, P4 = 0.04978, 7.48, 50.08, 6.73
Q1, Q2 = 14.49, 15.94
CHI_SHORT_LIMIT = 0.2
CHI_LONG_LIMIT = 200.0
DL_SHORT_LIMIT = 0.89
DL_LONG_LIMIT = 16.33


@dataclass(frozen=True)
class TimeOptProblem:
    chi: float
    a_max: float
    dt_f: float

    def __post_init__(self):
        if not self.chi > 0:
            raise DomainError(f"chi must be positive, got {self.chi}")
        if not self.a_max > 0:
            raise DomainError(f"a_max must be positive, got {self.a_max}")

    @property
    def sign_l0(self) -> float:
        return -math.copysign(1.0, self.dt_f)

    @classmethod
    def from_chi(cls, chi: float, a_max: float = 1.0, sign_l0: float = 1.0) -> "TimeOptProblem":
        return cls(chi=chi, a_max=a_max, dt_f=-sign_l0 * chi * a_max)

    @classmethod
    def from_phase(cls, dt_f: float, a_max: float) -> "TimeOptProblem":
        if dt_f == 0:
            raise DomainError("A zero phase difference needs no transfer (chi = 0)")
        return cls(chi=abs(dt_f) / a_max, a_max=a_max, dt_f=dt_f)


@dataclass(frozen=True)
class TimeOptSolution:
    delta_L: float
    l1: float
    sign_l0: float
    chi: float
    a_max: float
    dt_f: float
    strategy: str = "double-loop"
    iterations: int = 0
    residual: float = 0.0
    attempts: int = 1
    seed_source: str = "approximation"

    @property
    def tof(self) -> float:
        return self.delta_L + self.dt_f

    @property
    def l0_magnitude(self) -> float:
        return lambda0_magnitude(self.delta_L, self.l1, self.a_max)


# --- Shooting functions -------------------------------------------------------

def _g1(L, l1):
    s, c = math.sin(L), math.cos(L)
    return (6.0 * L * s + 2.0 * c - l1 - 3.0 * l1 * s * s) / linmodel.direction_denominator(L, l1)


def _g2(L, l1):
    s, c = math.sin(L), math.cos(L)
    return (9.0 * L * L + 4.0 - 6.0 * l1 * L * s - 2.0 * l1 * c) / linmodel.direction_denominator(L, l1)


def _dg1_dl1(L, l1):
    s, c = math.sin(L), math.cos(L)
    return -((3.0 * L * c - 4.0 * s) ** 2) / linmodel.direction_denominator(L, l1) ** 3


def _quad_tol(delta_L: float) -> float:
    # f1 and f2 scale like dL^2 for short transfers
    return max(QUAD_TOL * min(1.0, delta_L * delta_L), QUAD_NOISE_FLOOR)


def _check_delta_L(delta_L: float):
    if not delta_L > 0:
        raise DomainError(f"delta_L must be positive, got {delta_L}")


def f1(delta_L: float, l1: float) -> float:
    _check_delta_L(delta_L)
    return quad_adaptive(lambda L: _g1(L, l1), 0.0, 0.5 * delta_L, _quad_tol(delta_L))


def f1_partials(delta_L: float, l1: float):
    _check_delta_L(delta_L)
    d_dL = 0.5 * _g1(0.5 * delta_L, l1)
    d_dl1 = quad_adaptive(lambda L: _dg1_dl1(L, l1), 0.0, 0.5 * delta_L, _quad_tol(delta_L))
    return d_dL, d_dl1


def f2(delta_L: float, l1: float) -> float:
    _check_delta_L(delta_L)
    return 2.0 * quad_adaptive(lambda L: _g2(L, l1), 0.0, 0.5 * delta_L, _quad_tol(delta_L))


def f2_partials(delta_L: float, l1: float):
    _, df1_dl1 = f1_partials(delta_L, l1)
    return _g2(0.5 * delta_L, l1), 2.0 * l1 * df1_dl1


def lambda0_magnitude(delta_L: float, l1: float, a_max: float) -> float:
    """|l0| fixed by the transversality condition H(Lf) = 0."""
    return 1.0 / (a_max * float(linmodel.direction_denominator(0.5 * delta_L, l1)))


def hamiltonian_at_final(delta_L: float, l1: float, a_max: float, l0: float) -> float:
    return 1.0 - a_max * abs(l0) * float(linmodel.direction_denominator(0.5 * delta_L, l1))


# --- Analytic approximations ----------------------------------------------------

def approx_lambda1(delta_L: float) -> float:
    _check_delta_L(delta_L)
    if delta_L > TIME_SWEEP_MAX:
        logger.warning("approx_lambda1 extrapolated beyond the fitted range (dL=%g > %g)", delta_L, TIME_SWEEP_MAX)
    fit = _L1_SHORT if delta_L <= L1_FIT_SPLIT else _L1_LONG
    x = fit["n"] * delta_L
    return fit["c0"] + sum(
        c * math.cos(i * x) + d * math.sin(i * x)
        for i, (c, d) in enumerate(zip(fit["c"], fit["d"]), start=1)
    )


def approx_deltaL(chi: float) -> float:
    if not chi > 0:
        raise DomainError(f"chi must be positive, got {chi}")
    if chi <= CHI_SHORT_LIMIT:
        return 2.0 * math.sqrt(chi)
    if chi <= CHI_LONG_LIMIT:
        return (P1 * chi**3 + P2 * chi**2 + P3 * chi + P4) / (chi**2 + Q1 * chi + Q2)
    return 2.0 * math.sqrt(chi / 3.0)


def chi_max(delta_L: float) -> float:
    """Approximate largest chi reachable with a transfer of length dL."""
    _check_delta_L(delta_L)
    if delta_L <= DL_SHORT_LIMIT:
        return 0.25 * delta_L**2
    if delta_L <= DL_LONG_LIMIT:
        cubic = lambda chi: (  # noqa: E731
            P1 * chi**3 + (P2 - delta_L) * chi**2 + (P3 - Q1 * delta_L) * chi + P4 - Q2 * delta_L
        )
        return bisect(cubic, 0.0, 1e4, xtol=1e-14, rtol=1e-14, maxiter=200)
    return 0.75 * delta_L**2


def short_term_alpha(delta_L: float) -> float:
    """alpha = 2 - l1 for short transfers, from sinh(y) = 4y/dL with y = dL^2/(8 alpha)."""
    _check_delta_L(delta_L)
    if delta_L >= 4.0:
        raise DomainError(f"The short-term relation has no positive root for dL >= 4 (got {delta_L})")
    h = lambda y: math.sinh(y) - 4.0 * y / delta_L  # noqa: E731
    y_lo = 1e-6
    y_hi = 2.0 * math.log(8.0 / delta_L) + 2.0
    while h(y_hi) <= 0:
        y_hi *= 2.0
    y = brentq(h, y_lo, y_hi, xtol=1e-15, rtol=1e-15)
    return delta_L**2 / (8.0 * y)


def short_term_lambda1(delta_L: float) -> float:
    return 2.0 - short_term_alpha(delta_L)


def short_term_solution(chi: float, a_max: float = 1.0, sign_l0: float = 1.0) -> TimeOptSolution:
    delta_L = 2.0 * math.sqrt(chi)
    return TimeOptSolution(
        delta_L=delta_L,
        l1=short_term_lambda1(delta_L),
        sign_l0=sign_l0,
        chi=chi,
        a_max=a_max,
        dt_f=-sign_l0 * chi * a_max,
        strategy="analytic-short",
        seed_source="analytic",
    )


def long_term_solution(chi: float, a_max: float = 1.0, sign_l0: float = 1.0) -> TimeOptSolution:
    delta_L = 2.0 * math.sqrt(chi / 3.0)
    return TimeOptSolution(
        delta_L=delta_L,
        l1=solve_lambda1(delta_L),
        sign_l0=sign_l0,
        chi=chi,
        a_max=a_max,
        dt_f=-sign_l0 * chi * a_max,
        strategy="analytic-long",
        seed_source="analytic",
    )


# --- Exact solves -----------------------------------------------------------------

def _lambda1_seed(delta_L: float) -> float:
    if delta_L < 1.0:
        return short_term_lambda1(delta_L)
    return approx_lambda1(delta_L)


def lambda1_root(delta_L: float, x0: Optional[float] = None, settings: Optional[RootSettings] = None):
    """Unique root of f1(dL, .) as a ScalarRoot (root, residual, iterations)."""
    _check_delta_L(delta_L)
    settings = settings or RootSettings()
    scaled = settings.model_copy(update={"residual_tol": max(settings.residual_tol * min(1.0, delta_L**2), RESIDUAL_FLOOR)})
    seed = _lambda1_seed(delta_L) if x0 is None else x0
    return newton_scalar(
        lambda l1: f1(delta_L, l1),
        lambda l1: f1_partials(delta_L, l1)[1],
        seed,
        scaled,
        step=0.25,
    )


def solve_lambda1(delta_L: float, x0: Optional[float] = None, settings: Optional[RootSettings] = None) -> float:
    return lambda1_root(delta_L, x0, settings).root


def chi_of_delta_L(delta_L: float, l1: Optional[float] = None):
    """Exact chi on the solution curve; returns (chi, l1)."""
    if l1 is None:
        l1 = solve_lambda1(delta_L)
    return f2(delta_L, l1), l1


def dchi_ddelta_L(delta_L: float, l1: float) -> float:
    """Total derivative of chi along the solution curve (l1 = l1(dL))."""
    df1_dL = 0.5 * _g1(0.5 * delta_L, l1)
    return _g2(0.5 * delta_L, l1) - 2.0 * l1 * df1_dL


def solution_residual(delta_L: float, l1: float, chi: float) -> float:
    """max(|f1|, |f2 - chi| / max(1, chi)) at a candidate solution."""
    return max(abs(f1(delta_L, l1)), abs(f2(delta_L, l1) - chi) / max(1.0, chi))


def _residual_tol(settings: RootSettings, chi: float) -> float:
    # relative to chi: f2 carries quadrature noise proportional to its size
    return max(settings.residual_tol * chi, RESIDUAL_FLOOR)


def _solve_double_loop(problem: TimeOptProblem, delta_L0: float, l1_0: float, settings: RootSettings):
    cache = {"l1": l1_0, "inner": 0}

    def inner(delta_L):
        result = lambda1_root(delta_L, cache["l1"], settings)
        cache["l1"] = result.root
        cache["inner"] += result.iterations
        return result.root

    def h(delta_L):
        l1 = inner(delta_L)
        return f2(delta_L, l1) - problem.chi

    def dh(delta_L):
        return dchi_ddelta_L(delta_L, cache["l1"])

    outer = newton_scalar(
        h,
        dh,
        delta_L0,
        settings.model_copy(update={"residual_tol": _residual_tol(settings, problem.chi)}),
        domain=(0.0, math.inf),
        step=0.1 * delta_L0,
    )
    delta_L = outer.root
    l1 = solve_lambda1(delta_L, cache["l1"], settings)
    return delta_L, l1, outer.iterations


def _solve_hybrid2d(problem: TimeOptProblem, delta_L0: float, l1_0: float, settings: RootSettings):
    def F(z):
        delta_L, l1 = z
        if delta_L <= 0:
            return np.array([1e3, 1e3])
        return np.array([f1(delta_L, l1), f2(delta_L, l1) - problem.chi])

    def J(z):
        delta_L, l1 = z
        d1_dL, d1_dl1 = f1_partials(delta_L, l1)
        return np.array([
            [d1_dL, d1_dl1],
            [_g2(0.5 * delta_L, l1), 2.0 * l1 * d1_dl1],
        ])

    tuned = settings.model_copy(update={"residual_tol": _residual_tol(settings, problem.chi)})
    result = hybrid_solve(F, [delta_L0, l1_0], jac=J, settings=tuned)
    delta_L, l1 = result.x
    return float(delta_L), float(l1), result.iterations


def _seeds(chi: float):
    """(source, dL0, l1_0) in the order they are tried."""
    delta_L0 = approx_deltaL(chi)
    yield "approximation", delta_L0, _lambda1_seed(delta_L0)
    analytic = 2.0 * math.sqrt(chi) if chi <= 1.0 else 2.0 * math.sqrt(chi / 3.0)
    yield "analytic", analytic, _lambda1_seed(analytic)
    yield "approximation+5%", 1.05 * delta_L0, _lambda1_seed(1.05 * delta_L0)


def solve_time_optimal(
    problem: TimeOptProblem,
    strategy: str = "double-loop",
    settings: Optional[RootSettings] = None,
) -> TimeOptSolution:
    if strategy not in STRATEGIES:
        raise DomainError(f"Unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    # seeds sit within about 1% of the root, so the first hybrid step may be a full Newton step
    settings = settings or RootSettings(initial_trust_factor=TRUST_FACTOR)
    solver = _solve_double_loop if strategy == "double-loop" else _solve_hybrid2d
    history = []
    for attempt, (source, delta_L0, l1_0) in enumerate(_seeds(problem.chi), start=1):
        if attempt > MAX_ATTEMPTS:
            break
        try:
            delta_L, l1, iterations = solver(problem, delta_L0, l1_0, settings)
        except RephaseError as exc:
            logger.warning("time-optimal %s attempt %d failed from dL0=%.6g: %s", strategy, attempt, delta_L0, exc)
            history.append(f"attempt {attempt}: {exc}")
            continue
        residual = solution_residual(delta_L, l1, problem.chi)
        logger.info("time-optimal chi=%.6g -> dL=%.10g l1=%.10g (%s, %d iterations)", problem.chi, delta_L, l1, strategy, iterations)
        return TimeOptSolution(
            delta_L=delta_L,
            l1=l1,
            sign_l0=problem.sign_l0,
            chi=problem.chi,
            a_max=problem.a_max,
            dt_f=problem.dt_f,
            strategy=strategy,
            iterations=iterations,
            residual=residual,
            attempts=attempt,
            seed_source=source,
        )
    raise NonConvergenceError(
        f"Time-optimal solve for chi={problem.chi} failed after {MAX_ATTEMPTS} attempts",
        history=history,
    )


def mirror(solution: TimeOptSolution) -> TimeOptSolution:
    """The other branch: same (dL, l1), opposite sign of l0 and of the phase."""
    return replace(solution, sign_l0=-solution.sign_l0, dt_f=-solution.dt_f)


# --- Control and verification --------------------------------------------------

def control(solution: TimeOptSolution):
    def control_fn(L):
        u_r, u_th = linmodel.unit_control_direction(L, solution.l1, solution.sign_l0)
        return linmodel.ControlLVLH(solution.a_max * u_r, solution.a_max * u_th)

    return control_fn


def propagate(solution: TimeOptSolution, settings: Optional[IntegratorSettings] = None):
    # L = 0 is where the radial component turns around; land a step there
    return linmodel.propagate(solution.delta_L, control(solution), settings, breakpoints=(0.0,))


def boundary_residuals(solution: TimeOptSolution, settings: Optional[IntegratorSettings] = None) -> dict:
    traj = propagate(solution, settings)
    dp, df, dg, dt, dt_reduced = traj.y_final
    return {
        "dp": float(dp),
        "df": float(df),
        "dg": float(dg),
        "dt_error": float(dt - solution.dt_f),
        "dt_reduced_error": float(dt_reduced - dt),
    }


def control_profile(
    solution: TimeOptSolution,
    n_points: int = 401,
    settings: Optional[IntegratorSettings] = None,
) -> pd.DataFrame:
    traj = propagate(solution, settings)
    control_fn = control(solution)
    rows = []
    for L in np.linspace(-0.5 * solution.delta_L, 0.5 * solution.delta_L, n_points):
        ctrl = control_fn(L)
        dp, df, dg, dt, _ = traj(L)
        x, y = linmodel.relative_position((dp, df, dg, dt), L, solution.dt_f)
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
        })
    return pd.DataFrame(rows)
