"""Planar equinoctial dynamics in true longitude, with costates and 4-D shooting.

State x = (p, f, g) with h = k = 0 and mu = 1; time t is integrated alongside
via t' = 1/A. The Hamiltonian in L is

    H = (lx^T B a + lt + phi) / A

with phi = 1 for minimum time and phi = |a| for minimum propellant. Partials
of H with respect to x are analytic; the control is held at its optimal value.
"""
import math
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from rephase import fuelopt, linmodel
from rephase.config import ContinuationSettings, IntegratorSettings, RootSettings
from rephase.errors import ContinuationError, DomainError, DynamicsDomainError, RephaseError, SingularControlError
from rephase.numerics import hybrid_solve, integrate

logger = logging.getLogger(__name__)

KINDS = ("time", "fuel")
NOMINAL = np.array([1.0, 0.0, 0.0])

# z = [p, f, g, t, l_p, l_f, l_g, l_t, J]
_N_STATE = 9


class EquinoctialState(NamedTuple):
    p: float
    f: float
    g: float
    L: float
    t: float = 0.0

    @property
    def w(self) -> float:
        return 1.0 + self.f * math.cos(self.L) + self.g * math.sin(self.L)


class NonlinCostates(NamedTuple):
    lx: tuple  # (l_p, l_f, l_g)
    lt: float


class MappedGuess(NamedTuple):
    costates: NonlinCostates
    delta_L: float


def _check_domain(p, f, g, L):
    w = 1.0 + f * math.cos(L) + g * math.sin(L)
    if not p > 0 or not w > 0:
        raise DynamicsDomainError(f"Equinoctial state left its domain at L={L}: p={p}, w={w}")
    return w


def sundman_A(p: float, f: float, g: float, L: float) -> float:
    """dL/dt."""
    w = _check_domain(p, f, g, L)
    return w * w * p**-1.5


def b_matrix(p: float, f: float, g: float, L: float) -> np.ndarray:
    """Gauss variational matrix mapping (a_r, a_th) to d(p, f, g)/dt."""
    w = _check_domain(p, f, g, L)
    s, c = math.sin(L), math.cos(L)
    return math.sqrt(p) * np.array([
        [0.0, 2.0 * p / w],
        [s, ((w + 1.0) * c + f) / w],
        [-c, ((w + 1.0) * s + g) / w],
    ])


def equinoctial_rhs(state: EquinoctialState, ctrl) -> np.ndarray:
    """d(p, f, g, t)/dL under the control (a_r, a_th)."""
    p, f, g, L = state.p, state.f, state.g, state.L
    A = sundman_A(p, f, g, L)
    x_dot = b_matrix(p, f, g, L) @ np.asarray(ctrl, dtype=float) / A
    return np.append(x_dot, 1.0 / A)


def _phi(phi_kind: str, ctrl) -> float:
    return 1.0 if phi_kind == "time" else math.hypot(ctrl[0], ctrl[1])


def hamiltonian(state: EquinoctialState, costates: NonlinCostates, ctrl, phi_kind: str) -> float:
    p, f, g, L = state.p, state.f, state.g, state.L
    A = sundman_A(p, f, g, L)
    lam = np.asarray(costates.lx, dtype=float)
    return (lam @ b_matrix(p, f, g, L) @ np.asarray(ctrl, dtype=float) + costates.lt + _phi(phi_kind, ctrl)) / A


def hamiltonian_gradient(state: EquinoctialState, costates: NonlinCostates, ctrl, phi_kind: str) -> np.ndarray:
    """dH/d(p, f, g) with the control held fixed."""
    p, f, g, L = state.p, state.f, state.g, state.L
    w = _check_domain(p, f, g, L)
    s, c = math.sin(L), math.cos(L)
    a_r, a_th = ctrl
    l_p, l_f, l_g = costates.lx

    # lx^T B a / A = p^2 w^-2 N
    N = (
        l_p * 2.0 * p * a_th / w
        + l_f * (a_r * s + a_th * (c + (c + f) / w))
        + l_g * (-a_r * c + a_th * (s + (s + g) / w))
    )
    dN_dp = 2.0 * l_p * a_th / w
    dN_df = (
        -2.0 * l_p * p * a_th * c / w**2
        + l_f * a_th * (1.0 / w - (c + f) * c / w**2)
        - l_g * a_th * (s + g) * c / w**2
    )
    dN_dg = (
        -2.0 * l_p * p * a_th * s / w**2
        - l_f * a_th * (c + f) * s / w**2
        + l_g * a_th * (1.0 / w - (s + g) * s / w**2)
    )
    dQ = np.array([
        2.0 * p * N / w**2 + p * p * dN_dp / w**2,
        p * p * (-2.0 * c * N / w**3 + dN_df / w**2),
        p * p * (-2.0 * s * N / w**3 + dN_dg / w**2),
    ])
    # (1/A^2) dA/dx
    dA_scaled = np.array([
        -1.5 * math.sqrt(p) / w**2,
        2.0 * c * p**1.5 / w**3,
        2.0 * s * p**1.5 / w**3,
    ])
    return dQ - (costates.lt + _phi(phi_kind, ctrl)) * dA_scaled


def costate_rhs(state: EquinoctialState, costates: NonlinCostates, ctrl, phi_kind: str) -> np.ndarray:
    return -hamiltonian_gradient(state, costates, ctrl, phi_kind)


def switching_rho(state: EquinoctialState, costates: NonlinCostates) -> float:
    Bt_l = b_matrix(state.p, state.f, state.g, state.L).T @ np.asarray(costates.lx, dtype=float)
    return 1.0 - float(np.hypot(*Bt_l))


def nonlinear_control(
    state: EquinoctialState,
    costates: NonlinCostates,
    phi_kind: str,
    a_max: float,
    epsilon: Optional[float] = None,
) -> linmodel.ControlLVLH:
    if phi_kind not in KINDS:
        raise DomainError(f"phi_kind must be one of {KINDS}, got {phi_kind!r}")
    Bt_l = b_matrix(state.p, state.f, state.g, state.L).T @ np.asarray(costates.lx, dtype=float)
    norm = float(np.hypot(*Bt_l))
    if phi_kind == "time":
        magnitude = a_max
    else:
        if epsilon is None:
            raise DomainError("Fuel-optimal control needs a smoothing epsilon")
        magnitude = float(fuelopt.smoothed_magnitude(1.0 - norm, epsilon, a_max))
    if norm < linmodel.SINGULAR_DENOMINATOR:
        if phi_kind == "fuel" and magnitude < 1e-12 * a_max:
            return linmodel.ControlLVLH(0.0, 0.0)
        raise SingularControlError(f"B^T lx vanishes at L={state.L}")
    return linmodel.ControlLVLH(-magnitude * Bt_l[0] / norm, -magnitude * Bt_l[1] / norm)


def _full_rhs(phi_kind: str, a_max: float, epsilon: Optional[float]):
    def rhs(L, z):
        state = EquinoctialState(z[0], z[1], z[2], L, z[3])
        costates = NonlinCostates((z[4], z[5], z[6]), z[7])
        ctrl = nonlinear_control(state, costates, phi_kind, a_max, epsilon)
        A = sundman_A(state.p, state.f, state.g, L)
        return np.concatenate([
            equinoctial_rhs(state, ctrl),
            costate_rhs(state, costates, ctrl, phi_kind),
            [0.0, ctrl.magnitude / A],
        ])

    return rhs


def propagate_extremal(
    costates: NonlinCostates,
    delta_L: float,
    kind: str,
    a_max: float,
    epsilon: Optional[float] = None,
    settings: Optional[IntegratorSettings] = None,
):
    """Integrate states, costates and J from the nominal orbit over [-dL/2, dL/2]."""
    if not delta_L > 0:
        raise DomainError(f"delta_L must be positive, got {delta_L}")
    z0 = np.zeros(_N_STATE)
    z0[:3] = NOMINAL
    z0[4:7] = costates.lx
    z0[7] = costates.lt
    return integrate(_full_rhs(kind, a_max, epsilon), (-0.5 * delta_L, 0.5 * delta_L), z0, settings)


def propagate_open_loop(control_fn, span, settings: Optional[IntegratorSettings] = None, x0=(1.0, 0.0, 0.0, 0.0)):
    """States (p, f, g, t) under a prescribed LVLH control function of L."""

    def rhs(L, y):
        return equinoctial_rhs(EquinoctialState(y[0], y[1], y[2], L, y[3]), control_fn(L))

    return integrate(rhs, span, np.asarray(x0, dtype=float), settings)


def map_linear_costates(lin) -> MappedGuess:
    """Costates at L0 = -dL/2 from a linear time- or fuel-optimal solution.

    Time problems are normalized so that lt + 1 = sign(l0) = +-1; fuel
    problems carry lt = l0 unchanged.
    """
    L0 = -0.5 * lin.delta_L
    if isinstance(lin, fuelopt.FuelOptSolution):
        l0 = lin.sign_l0 * lin.l0
        lt = l0
    else:
        l0 = lin.sign_l0
        lt = lin.sign_l0 - 1.0
    l_p, l_f, l_g = linmodel.costates_closed_form(L0, l0, lin.l1)
    return MappedGuess(NonlinCostates((float(l_p), float(l_f), float(l_g)), float(lt)), float(lin.delta_L))


@dataclass
class NonlinearSolution:
    kind: str
    costates: NonlinCostates
    delta_L: float
    dt_f: float
    a_max: float
    epsilon: Optional[float]
    J: float
    residual: float
    iterations: int
    lt_drift: float
    history: list = field(default_factory=list)
    epsilon_path: tuple = ()

    @property
    def tof(self) -> float:
        return self.delta_L + self.dt_f

    @property
    def J_norm(self) -> float:
        return self.J / (self.a_max * self.delta_L)


def _terminal_residual(traj, delta_L, dt_f):
    z = traj.y_final
    return np.array([z[0] - 1.0, z[1], z[2], z[3] - (delta_L + dt_f)])


def solve_nonlinear(
    kind: str,
    dt_f: float,
    a_max: float,
    guess: MappedGuess,
    epsilon: Optional[float] = None,
    settings: Optional[RootSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
) -> NonlinearSolution:
    """Shoot on (lx, dL) for minimum time or (lx, lt) for minimum propellant."""
    if kind not in KINDS:
        raise DomainError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == "fuel" and epsilon is None:
        raise DomainError("Fuel-optimal shooting needs a smoothing epsilon")
    settings = settings or RootSettings(residual_tol=1e-9)
    history = []

    if kind == "time":
        lt = guess.costates.lt

        def unpack(z):
            return NonlinCostates(tuple(z[:3]), lt), float(z[3])

        z0 = list(guess.costates.lx) + [guess.delta_L]
    else:
        delta_L = guess.delta_L

        def unpack(z):
            return NonlinCostates(tuple(z[:3]), float(z[3])), delta_L

        z0 = list(guess.costates.lx) + [guess.costates.lt]

    def F(z):
        costates, dL = unpack(z)
        if dL <= 0:
            raise DynamicsDomainError(f"Shooting stepped to a non-positive transfer length {dL}")
        r = _terminal_residual(propagate_extremal(costates, dL, kind, a_max, epsilon, integrator), dL, dt_f)
        history.append(float(np.max(np.abs(r))))
        return r

    result = hybrid_solve(F, z0, settings=settings)
    costates, dL = unpack(result.x)
    traj = propagate_extremal(costates, dL, kind, a_max, epsilon, integrator)
    lt_drift = float(np.max(np.abs(traj.y[7] - costates.lt)))
    logger.info("nonlinear %s: dL=%.10g lx=%s lt=%.10g residual=%.2e", kind, dL, costates.lx, costates.lt, result.residual)
    return NonlinearSolution(
        kind=kind,
        costates=NonlinCostates(tuple(float(v) for v in costates.lx), float(costates.lt)),
        delta_L=dL,
        dt_f=dt_f,
        a_max=a_max,
        epsilon=epsilon,
        J=float(traj.y_final[8]),
        residual=result.residual,
        iterations=result.iterations,
        lt_drift=lt_drift,
        history=history,
        epsilon_path=() if epsilon is None else (epsilon,),
    )


def continue_nonlinear(
    solution: NonlinearSolution,
    epsilon_target: Optional[float] = None,
    schedule: Optional[ContinuationSettings] = None,
    settings: Optional[RootSettings] = None,
    integrator: Optional[IntegratorSettings] = None,
    max_refinements: int = 3,
) -> NonlinearSolution:
    """Drive the smoothing of a fuel-optimal shooting solution towards bang-bang.

    Each step re-solves from the previous costates only. A failed step is
    retried with the reduction factor replaced by its square root, at most
    ``max_refinements`` times.
    """
    if solution.kind != "fuel":
        raise DomainError(f"Only fuel-optimal solutions carry a smoothing epsilon, got kind {solution.kind!r}")
    schedule = schedule or ContinuationSettings()
    target = schedule.epsilon_target if epsilon_target is None else epsilon_target
    if not target > 0:
        raise DomainError(f"epsilon_target must be positive, got {target}")

    current = solution
    path = list(solution.epsilon_path or (solution.epsilon,))
    while current.epsilon > target * (1.0 + 1e-12):
        step = schedule.factor
        for _ in range(max_refinements + 1):
            eps = max(current.epsilon / step, target)
            guess = MappedGuess(current.costates, current.delta_L)
            try:
                nxt = solve_nonlinear("fuel", current.dt_f, current.a_max, guess, eps, settings, integrator)
                break
            except RephaseError as exc:
                logger.warning("nonlinear continuation step %g -> %g failed: %s", current.epsilon, eps, exc)
                step = math.sqrt(step)
        else:
            raise ContinuationError(
                f"Nonlinear continuation stalled at epsilon={current.epsilon:g} (target {target:g})",
                last_solution=current,
                last_epsilon=current.epsilon,
            )
        path.append(eps)
        current = replace(nxt, epsilon_path=tuple(path))
        logger.info("nonlinear continuation eps=%g: lt=%.10g J/(a dL)=%.6f", eps, current.costates.lt, current.J_norm)
    return current


def propagate(solution: NonlinearSolution, n_points: int = 401, settings: Optional[IntegratorSettings] = None) -> pd.DataFrame:
    """State, costate and control history of a converged solution."""
    traj = propagate_extremal(solution.costates, solution.delta_L, solution.kind, solution.a_max, solution.epsilon, settings)
    rows = []
    for L in np.linspace(-0.5 * solution.delta_L, 0.5 * solution.delta_L, n_points):
        z = traj(L)
        state = EquinoctialState(z[0], z[1], z[2], L, z[3])
        costates = NonlinCostates((z[4], z[5], z[6]), z[7])
        ctrl = nonlinear_control(state, costates, solution.kind, solution.a_max, solution.epsilon)
        rows.append({
            "L": L,
            "p": z[0],
            "f": z[1],
            "g": z[2],
            "t": z[3],
            "l_p": z[4],
            "l_f": z[5],
            "l_g": z[6],
            "l_t": z[7],
            "a_r": ctrl.a_r,
            "a_th": ctrl.a_th,
            "magnitude": ctrl.magnitude,
            "rho": switching_rho(state, costates),
            "J": z[8],
        })
    return pd.DataFrame(rows)
