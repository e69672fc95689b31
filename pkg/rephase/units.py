"""Canonical scaling: initial radius = 1, mu = 1, circular period = 2*pi."""
import math
from dataclasses import dataclass

from rephase.errors import DomainError


@dataclass(frozen=True)
class CanonicalScales:
    length_unit: float  # m
    time_unit: float  # s
    accel_unit: float  # m/s^2

    @property
    def velocity_unit(self) -> float:
        return self.length_unit / self.time_unit


def make_scales(radius: float, mu: float) -> CanonicalScales:
    if radius <= 0 or mu <= 0:
        raise DomainError(f"radius and mu must be positive, got radius={radius}, mu={mu}")
    time_unit = math.sqrt(radius**3 / mu)
    return CanonicalScales(
        length_unit=radius,
        time_unit=time_unit,
        accel_unit=radius / time_unit**2,
    )


def nondimensionalize_problem(phase_diff: float, thrust_accel: float, scales: CanonicalScales):
    """Return (dt_f, a_max) in canonical units.

    The phase difference is not wrapped: callers wrap to [-pi, pi] themselves.
    """
    if abs(phase_diff) > math.pi:
        raise DomainError(f"Phase difference {phase_diff} rad lies outside [-pi, pi]; wrap it first")
    if thrust_accel <= 0:
        raise DomainError(f"Thrust acceleration must be positive, got {thrust_accel}")
    return phase_diff, thrust_accel / scales.accel_unit


def dimensionalize_problem(dt_f: float, a_max: float, scales: CanonicalScales):
    """Inverse of nondimensionalize_problem: (phase rad, thrust accel m/s^2)."""
    return dt_f, a_max * scales.accel_unit


def to_seconds(t: float, scales: CanonicalScales) -> float:
    return t * scales.time_unit


def to_meters_per_second(dv: float, scales: CanonicalScales) -> float:
    return dv * scales.velocity_unit
