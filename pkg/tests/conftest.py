import numpy as np
import pandas as pd
import pytest

from rephase import atlas, fuelopt, timeopt


@pytest.fixture(scope="session")
def time_case1():
    """chi = 0.05 (dt_f = -0.005, a_max = 0.1)."""
    return timeopt.solve_time_optimal(timeopt.TimeOptProblem.from_phase(-0.005, 0.1))


@pytest.fixture(scope="session")
def time_case2():
    return timeopt.solve_time_optimal(timeopt.TimeOptProblem.from_chi(10.0))


@pytest.fixture(scope="session")
def time_case3():
    return timeopt.solve_time_optimal(timeopt.TimeOptProblem.from_chi(1000.0))


@pytest.fixture(scope="session")
def fuel_case1():
    return fuelopt.solve_fuel_optimal(fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4, epsilon=0.01))


@pytest.fixture
def make_grid():
    """Factory for a 3 x 2 fuel atlas (dL 1..3, eta 0.4..0.5) with fields linear in (dL, eta).

    overrides maps (dL, eta) -> {column: value}.
    """

    def build(overrides=None):
        overrides = overrides or {}
        rows = []
        for dL in (1.0, 2.0, 3.0):
            for eta in (0.4, 0.5):
                row = {
                    "dL": dL,
                    "eta": eta,
                    "l0_times_dL": dL + eta,
                    "l1": 1.0 + 0.1 * dL + eta,
                    "J_norm": 1.0 - eta,
                    "n_arcs": 2,
                    "converged": 1,
                    "epsilon": 0.1,
                }
                row.update(overrides.get((dL, eta), {}))
                rows.append(row)
        cells = pd.DataFrame(rows, columns=atlas.FUEL_COLUMNS)
        return atlas.AtlasGrid(np.array([1.0, 2.0, 3.0]), np.array([0.4, 0.5]), cells, {"kind": "fuel", "epsilon": 0.1})

    return build
