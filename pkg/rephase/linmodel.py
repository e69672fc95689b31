"""Linearized, Sundman-transformed rephasing dynamics around a circular orbit.

The independent variable is the true longitude L, the transfer spans
[-dL/2, dL/2] and all quantities are canonical (radius = mu = 1).
"""
import math
from typing import Callable, NamedTuple, Optional

import numpy as np

from rephase.config import IntegratorSettings
from rephase.errors import SingularControlError
from rephase.numerics import Trajectory, integrate

SINGULAR_DENOMINATOR = 1e-14


class LinState(NamedTuple):
    dp: float
    df: float
    dg: float
    dt: float


class ControlLVLH(NamedTuple):
    a_r: float
    a_th: float

    @classmethod
    def from_polar(cls, magnitude: float, gamma: float) -> "ControlLVLH":
        """gamma is measured from the transversal direction toward radial."""
        return cls(magnitude * math.sin(gamma), magnitude * math.cos(gamma))

    @property
    def magnitude(self) -> float:
        return math.hypot(self.a_r, self.a_th)

    @property
    def gamma(self) -> float:
        return math.atan2(self.a_r, self.a_th)


class LinCostates(NamedTuple):
    l_dp: float
    l_df: float
    l_dg: float
    l0: float
    l1: float


def lin_rhs(L: float, ctrl: ControlLVLH, state) -> np.ndarray:
    dp, df, dg, _ = state
    s, c = math.sin(L), math.cos(L)
    return np.array([
        2.0 * ctrl.a_th,
        ctrl.a_r * s + 2.0 * ctrl.a_th * c,
        -ctrl.a_r * c + 2.0 * ctrl.a_th * s,
        1.5 * dp - 2.0 * df * c - 2.0 * dg * s,
    ])


def dt_reduced_rhs(L: float, ctrl: ControlLVLH) -> float:
    """Integrand whose integral over the transfer equals dt(Lf).

    Only valid for whole transfers that start and end on the nominal orbit.
    """
    return 2.0 * ctrl.a_r - 3.0 * L * ctrl.a_th


def costates_closed_form(L, l0: float, l1: float):
    return (-1.5 * l0 * L, 2.0 * l0 * np.sin(L), l0 * (l1 - 2.0 * np.cos(L)))


def costates_at(L: float, l0: float, l1: float) -> LinCostates:
    l_dp, l_df, l_dg = costates_closed_form(L, l0, l1)
    return LinCostates(float(l_dp), float(l_df), float(l_dg), l0, l1)


def direction_numerators(L, l1: float):
    """(radial, transversal) numerators of the optimal direction, before the sign of l0."""
    return l1 * np.cos(L) - 2.0, 3.0 * L - 2.0 * l1 * np.sin(L)


def direction_denominator(L, l1: float):
    n_r, n_th = direction_numerators(L, l1)
    return np.hypot(n_r, n_th)


def unit_control_direction(L: float, l1: float, sign_l0: float):
    n_r, n_th = direction_numerators(L, l1)
    d = math.hypot(n_r, n_th)
    if d < SINGULAR_DENOMINATOR:
        raise SingularControlError(f"Control direction undefined at L={L} for l1={l1}")
    return sign_l0 * n_r / d, sign_l0 * n_th / d


def propagate(
    delta_L: float,
    control_fn: Callable[[float], ControlLVLH],
    settings: Optional[IntegratorSettings] = None,
    breakpoints=(),
) -> Trajectory:
    """Integrate the four linear states plus the reduced dt integral from L0 = -dL/2.

    Rows of the result: dp, df, dg, dt, dt_reduced.
    """

    def rhs(L, y):
        ctrl = control_fn(L)
        return np.append(lin_rhs(L, ctrl, y[:4]), dt_reduced_rhs(L, ctrl))

    return integrate(rhs, (-0.5 * delta_L, 0.5 * delta_L), np.zeros(5), settings, breakpoints)


def relative_position(state, L: float, dt_f: float):
    """In-plane position of the chaser relative to the target (radial, along-track).

    The along-track angle is the remaining phase dt_f - dt, which vanishes at Lf.
    """
    dp, df, dg, dt = state
    return dp - df * np.cos(L) - dg * np.sin(L), dt_f - dt
