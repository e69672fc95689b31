import math

import pytest

from rephase import units
from rephase.errors import DomainError

MU_EARTH = 3.986004418e14


def test_identity_scaling():
    scales = units.make_scales(1.0, 1.0)
    assert scales.time_unit == 1.0
    assert scales.accel_unit == 1.0
    assert scales.velocity_unit == 1.0


def test_leo_acceleration_unit():
    scales = units.make_scales(6.9e6, MU_EARTH)
    assert scales.accel_unit == pytest.approx(8.372, rel=1e-3)
    assert scales.time_unit == pytest.approx(907.83, abs=0.05)
    assert scales.velocity_unit == pytest.approx(math.sqrt(MU_EARTH / 6.9e6), rel=1e-12)


def test_geo_acceleration_unit():
    scales = units.make_scales(42164e3, MU_EARTH)
    assert scales.accel_unit == pytest.approx(0.2242, rel=1e-3)
    # one canonical period is one sidereal day
    assert units.to_seconds(2 * math.pi, scales) == pytest.approx(86164.1, abs=2.0)


@pytest.mark.parametrize("radius, mu", [(0.0, 1.0), (1.0, -1.0), (-6.9e6, MU_EARTH)])
def test_make_scales_rejects_non_positive(radius, mu):
    with pytest.raises(DomainError):
        units.make_scales(radius, mu)


def test_nondimensionalize_table_cases():
    scales = units.make_scales(6.9e6, MU_EARTH)
    dt_f, a_max = units.nondimensionalize_problem(-0.005, 0.1 * scales.accel_unit, scales)
    assert dt_f == -0.005
    assert a_max == pytest.approx(0.1, rel=1e-14)

    dt_f, a_max = units.nondimensionalize_problem(-1.0, 0.001 * scales.accel_unit, scales)
    assert dt_f == -1.0
    assert a_max == pytest.approx(0.001, rel=1e-14)


def test_round_trip_restores_physical_inputs():
    scales = units.make_scales(6.9e6, MU_EARTH)
    phase, accel = -0.75, 3.5e-4
    back = units.dimensionalize_problem(*units.nondimensionalize_problem(phase, accel, scales), scales)
    assert back[0] == phase
    assert back[1] == pytest.approx(accel, rel=1e-14)


def test_unwrapped_phase_rejected():
    scales = units.make_scales(1.0, 1.0)
    with pytest.raises(DomainError, match="wrap"):
        units.nondimensionalize_problem(3.5, 0.1, scales)


def test_non_positive_thrust_rejected():
    scales = units.make_scales(1.0, 1.0)
    with pytest.raises(DomainError):
        units.nondimensionalize_problem(-0.1, 0.0, scales)


def test_delta_v_conversion():
    scales = units.make_scales(6.9e6, MU_EARTH)
    assert units.to_meters_per_second(1.0, scales) == pytest.approx(scales.velocity_unit)
