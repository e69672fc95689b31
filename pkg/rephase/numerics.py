"""Numerical kernels: ODE integration, adaptive quadrature and root finding.

Thin, checked wrappers around SciPy (solve_ivp, quad, root with MINPACK's
hybrid method) plus a safeguarded scalar Newton iteration. Every kernel is a
pure function of its inputs; no workspace is shared between calls.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import root

from rephase.config import IntegratorSettings, RootSettings
from rephase.errors import (
    IntegrationError,
    NonConvergenceError,
    QuadratureError,
    RephaseError,
    RootFindError,
)

logger = logging.getLogger(__name__)

# DOP853 uses 12 stages per step, RK45 6; the budget check is per evaluation
_STAGES = {"DOP853": 12, "RK45": 6}
ROUNDOFF_SLACK = 100.0


class _StepBudgetExceeded(Exception):
    def __init__(self, parameter, state):
        self.parameter = parameter
        self.state = state


@dataclass
class Trajectory:
    """Piecewise dense solution of an ODE over [a, b] (b < a allowed)."""
    t: np.ndarray
    y: np.ndarray  # shape (n_states, n_points)
    segments: list = field(default_factory=list)  # [(t0, t1, OdeSolution)]
    nfev: int = 0

    @property
    def y_final(self) -> np.ndarray:
        return self.y[:, -1]

    def __call__(self, s: float) -> np.ndarray:
        for t0, t1, sol in self.segments:
            if min(t0, t1) <= s <= max(t0, t1):
                return sol(s)
        raise ValueError(f"Parameter {s} lies outside the integrated span [{self.t[0]}, {self.t[-1]}]")


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    span: Sequence[float],
    y0,
    settings: Optional[IntegratorSettings] = None,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """Integrate y' = rhs(s, y) over span with steps landing on every breakpoint."""
    settings = settings or IntegratorSettings()
    a, b = float(span[0]), float(span[1])
    direction = 1.0 if b >= a else -1.0
    inner = sorted({float(p) for p in breakpoints if min(a, b) < p < max(a, b)}, reverse=direction < 0)
    knots = [a] + inner + [b]

    budget = settings.max_steps * _STAGES[settings.method]
    calls = {"n": 0}

    def counted(s, y):
        calls["n"] += 1
        if calls["n"] > budget:
            raise _StepBudgetExceeded(s, np.array(y, copy=True))
        return rhs(s, y)

    y = np.asarray(y0, dtype=float)
    ts, ys, segments = [np.array([a])], [y[:, None]], []
    for s0, s1 in zip(knots[:-1], knots[1:]):
        if s0 == s1:
            continue
        try:
            sol = solve_ivp(
                counted,
                (s0, s1),
                y,
                method=settings.method,
                rtol=settings.rel_tol,
                atol=settings.abs_tol,
                dense_output=True,
            )
        except _StepBudgetExceeded as exc:
            raise IntegrationError(
                f"Exceeded {settings.max_steps} steps integrating over [{a}, {b}]",
                last_parameter=exc.parameter,
                last_state=exc.state,
            )
        if sol.status != 0:
            raise IntegrationError(
                f"Integration failed at s={sol.t[-1]}: {sol.message}",
                last_parameter=sol.t[-1],
                last_state=sol.y[:, -1],
            )
        ts.append(sol.t[1:])
        ys.append(sol.y[:, 1:])
        segments.append((s0, s1, sol.sol))
        y = sol.y[:, -1]

    return Trajectory(t=np.concatenate(ts), y=np.hstack(ys), segments=segments, nfev=calls["n"])


def quad_adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-12,
    points: Sequence[float] = (),
    limit: int = 500,
) -> float:
    """Gauss-Kronrod adaptive quadrature of f over [a, b], subdividing at points.

    The absolute request is tol, the relative one max(tol, 5e-14). When
    QUADPACK returns a warning (typically roundoff at tolerances near machine
    precision) the estimate is kept only if its error bound is within
    ``ROUNDOFF_SLACK`` * tol * max(1, |I|); otherwise QuadratureError is raised.
    """
    if a == b:
        return 0.0
    lo, hi = min(a, b), max(a, b)
    inner = sorted({float(p) for p in points if lo < p < hi})
    result = quad(
        f,
        a,
        b,
        epsabs=tol,
        epsrel=max(tol, 5e-14),
        limit=limit,
        points=inner or None,
        full_output=1,
    )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        # QUADPACK flags roundoff on very tight tolerances even when the estimate is fine
        if not math.isfinite(value) or abserr > ROUNDOFF_SLACK * tol * max(1.0, abs(value)):
            raise QuadratureError(
                f"Quadrature over [{a}, {b}] did not converge: {result[3]}",
                estimate=value,
                abserr=abserr,
            )
        logger.debug("quad warning accepted (abserr=%.3e): %s", abserr, result[3])
    return value


@dataclass(frozen=True)
class ScalarRoot:
    root: float
    residual: float
    iterations: int


def _toward(x: float, delta: float, limit: float) -> float:
    candidate = x + delta
    if (delta < 0 and candidate <= limit) or (delta > 0 and candidate >= limit):
        return 0.5 * (x + limit)
    return candidate


def bracket_root(
    f: Callable[[float], float],
    x0: float,
    step: float = 0.5,
    domain: tuple = (-math.inf, math.inf),
    max_expansions: int = 60,
):
    """Grow an interval around x0 until f changes sign; returns (lo, hi, f_lo, f_hi).

    Intended for monotone f. A finite domain edge is approached geometrically
    and never reached.
    """
    d_lo, d_hi = domain
    lo, hi = _toward(x0, -step, d_lo), _toward(x0, step, d_hi)
    f_lo, f_hi = f(lo), f(hi)
    for _ in range(max_expansions):
        if f_lo == 0.0 or f_hi == 0.0 or np.sign(f_lo) != np.sign(f_hi):
            return lo, hi, f_lo, f_hi
        step *= 2.0
        lo, hi = _toward(lo, -step, d_lo), _toward(hi, step, d_hi)
        f_lo, f_hi = f(lo), f(hi)
    raise RootFindError(f"No sign change found around x0={x0} within domain {domain}")


def newton_scalar(
    f: Callable[[float], float],
    df: Callable[[float], float],
    x0: float,
    settings: Optional[RootSettings] = None,
    bracket: Optional[tuple] = None,
    domain: tuple = (-math.inf, math.inf),
    step: float = 0.5,
) -> ScalarRoot:
    """Newton iteration kept inside a sign bracket, bisecting when a step leaves it."""
    settings = settings or RootSettings()
    if bracket is None:
        lo, hi, f_lo, f_hi = bracket_root(f, x0, step=step, domain=domain)
    else:
        lo, hi = bracket
        f_lo, f_hi = f(lo), f(hi)
        if f_lo != 0.0 and f_hi != 0.0 and np.sign(f_lo) == np.sign(f_hi):
            raise RootFindError(f"Bracket [{lo}, {hi}] does not enclose a root")
    if f_lo == 0.0:
        return ScalarRoot(lo, 0.0, 0)
    if f_hi == 0.0:
        return ScalarRoot(hi, 0.0, 0)

    x = min(max(x0, lo), hi)
    for iteration in range(1, settings.max_iters + 1):
        fx = f(x)
        if abs(fx) <= settings.residual_tol:
            return ScalarRoot(x, abs(fx), iteration)
        if np.sign(fx) == np.sign(f_lo):
            lo, f_lo = x, fx
        else:
            hi, f_hi = x, fx
        if abs(hi - lo) <= settings.step_tol * max(1.0, abs(x)):
            return ScalarRoot(x, abs(fx), iteration)
        dfx = df(x)
        x_new = x - fx / dfx if dfx != 0.0 else math.nan
        if not (min(lo, hi) < x_new < max(lo, hi)):
            x_new = 0.5 * (lo + hi)
        x = x_new
    raise RootFindError(f"Newton iteration did not converge in {settings.max_iters} iterations (x={x})")


class _Converged(Exception):
    def __init__(self, z, fz):
        self.z = z
        self.fz = fz


@dataclass
class RootResult:
    x: np.ndarray
    residual: float
    nfev: int
    iterations: int
    message: str = ""


def hybrid_solve(
    F: Callable[[np.ndarray], np.ndarray],
    z0,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    settings: Optional[RootSettings] = None,
) -> RootResult:
    """Powell hybrid (dogleg trust region) solve of F(z) = 0.

    Uses the supplied Jacobian when given, forward differences otherwise. The
    solve stops at the first evaluation whose max-norm residual is within
    ``residual_tol``; iterations count the evaluations up to that point, less
    those spent on one finite-difference Jacobian. A failure raised inside F
    counts as nonconvergence so callers can reseed.
    """
    settings = settings or RootSettings()
    z0 = np.asarray(z0, dtype=float)
    n = z0.size
    maxfev = settings.max_iters if jac is not None else settings.max_iters * (n + 1)
    options = {"xtol": settings.step_tol, "maxfev": maxfev, "factor": settings.initial_trust_factor}
    calls = {"n": 0}

    def counted(z):
        calls["n"] += 1
        fz = np.asarray(F(z), dtype=float)
        if np.all(np.isfinite(fz)) and float(np.max(np.abs(fz))) <= settings.residual_tol:
            raise _Converged(np.array(z, copy=True), fz)
        return fz

    # root() evaluates F once at z0 to check its shape, then hybrd/hybrj start over
    def iterations():
        overhead = 2 if jac is not None else 2 + n
        return max(0, calls["n"] - overhead)

    try:
        sol = root(counted, z0, jac=jac, method="hybr", options=options)
    except _Converged as done:
        residual = float(np.max(np.abs(done.fz)))
        logger.debug("hybr: converged after %d evaluations, residual=%.3e", calls["n"], residual)
        return RootResult(x=done.z, residual=residual, nfev=calls["n"], iterations=iterations(), message="residual tolerance met")
    except RephaseError as exc:
        raise NonConvergenceError(f"Residual evaluation failed during hybrid solve: {exc}", history=[str(exc)])

    residual = float(np.max(np.abs(sol.fun)))
    logger.debug("hybr: nfev=%d residual=%.3e message=%s", calls["n"], residual, sol.message)
    if not np.isfinite(residual) or residual > settings.residual_tol:
        raise NonConvergenceError(
            f"Hybrid solve stalled with residual {residual:.3e}: {sol.message}",
            residual=residual,
            history=[sol.message],
        )
    return RootResult(x=np.array(sol.x), residual=residual, nfev=calls["n"], iterations=iterations(), message=sol.message)
