import math

import numpy as np
import numpy.testing as npt
import pytest

from rephase import fuelopt, linmodel, timeopt
from rephase.config import FuelSolverSettings
from rephase.errors import ContinuationError, DomainError, InfeasibleProblemError, NonConvergenceError

# linear rows of the short, medium and long reference transfers (a_max = 1e-3, eps = 0.01)
CASE2_L0, CASE2_L1 = 0.10688, -1.61623
CASE3_L0, CASE3_L1 = 0.01574, -3.15991


def test_switching_function_short_transfer():
    assert fuelopt.switching_rho(0.0, 10.20851, 1.97483) == pytest.approx(0.743, abs=1e-3)
    ends = fuelopt.switching_rho(np.array([-0.25, 0.25]), 10.20851, 1.97483)
    assert np.all(ends < -1.0)
    assert ends[0] == pytest.approx(ends[1], rel=1e-14)


def test_switching_function_without_primer():
    npt.assert_array_equal(fuelopt.switching_rho(np.linspace(-3, 3, 7), 0.0, 1.5), 1.0)


def test_smoothed_magnitude():
    eps, a_max = 0.01, 2.0
    assert fuelopt.smoothed_magnitude(0.0, eps, a_max) == pytest.approx(1.0)
    assert fuelopt.smoothed_magnitude(-10 * eps, eps, a_max) == pytest.approx(a_max, abs=1e-8 * a_max)
    assert fuelopt.smoothed_magnitude(10 * eps, eps, a_max) == pytest.approx(0.0, abs=1e-8 * a_max)
    values = fuelopt.smoothed_magnitude(np.linspace(-0.05, 0.05, 11), eps, a_max)
    assert np.all(np.diff(values) < 0)


def test_smoothed_magnitude_needs_positive_epsilon():
    with pytest.raises(DomainError):
        fuelopt.smoothed_magnitude(0.0, 0.0, 1.0)


def test_two_end_burns():
    n_arcs, profile = fuelopt.count_burn_arcs(10.20851, 1.97483, 0.5)
    assert n_arcs == 2
    assert profile.signs == (-1, 1, -1)
    left, right = profile.roots
    assert left == pytest.approx(-right, abs=1e-10)
    # switches sit close to +-eta*dL/2
    assert right == pytest.approx(0.1, abs=5e-3)


def test_no_burn_without_primer():
    n_arcs, profile = fuelopt.count_burn_arcs(0.0, 1.5, 3.0)
    assert n_arcs == 0
    assert profile.roots == ()


def test_analytic_estimates():
    l0, l1, J = fuelopt.analytic_fuel_estimate(0.5, 0.4, "short")
    assert l0 == pytest.approx(10.0)
    assert l1 == 2.0
    assert J == pytest.approx(0.6 * 0.5)
    l0, l1, J = fuelopt.analytic_fuel_estimate(50.0, 0.8, "long")
    assert l0 == pytest.approx(0.016667, abs=1e-6)
    assert l1 == pytest.approx(timeopt.solve_lambda1(50.0))
    assert J / 50.0 == pytest.approx(0.2)


def test_analytic_estimate_rejects_unknown_regime():
    with pytest.raises(DomainError):
        fuelopt.analytic_fuel_estimate(1.0, 0.5, "medium")


@pytest.mark.parametrize("kwargs", [
    {"delta_L": 0.0, "eta": 0.5},
    {"delta_L": 1.0, "eta": 1.0},
    {"delta_L": 1.0, "eta": 0.0},
    {"delta_L": 1.0, "eta": 0.5, "epsilon": 0.0},
    {"delta_L": 1.0, "eta": 0.5, "a_max": -1.0},
])
def test_problem_validation(kwargs):
    with pytest.raises(DomainError):
        fuelopt.FuelOptProblem(**kwargs)


def test_phase_from_slack():
    problem = fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4, a_max=0.001)
    # exact chi_max sits below the asymptotic dL^2/4
    assert problem.chi_max == pytest.approx(0.0620, abs=2e-4)
    assert problem.chi_max < 0.0625
    assert problem.dt_f == pytest.approx(-5.21e-5, rel=2e-3)


def test_slack_from_phase():
    problem = fuelopt.FuelOptProblem.from_phase(0.5, -5.21e-5, 0.001)
    assert problem.eta == pytest.approx(0.4, abs=5e-3)
    assert problem.sign_l0 == 1.0


def test_infeasible_phase_names_the_minimum():
    with pytest.raises(InfeasibleProblemError) as info:
        fuelopt.FuelOptProblem.from_phase(0.3, -0.05, 1.0)
    assert info.value.min_delta_L == pytest.approx(0.44866, abs=5e-4)


def test_saturated_throttle_recovers_time_optimal_integrals():
    problem = fuelopt.FuelOptProblem(delta_L=3.0, eta=0.5)
    r = fuelopt.fuel_residual(1e4, 1.2, problem)
    assert r[0] == pytest.approx(2.0 * timeopt.f1(3.0, 1.2), rel=1e-9)
    assert r[1] * max(1.0, problem.chi) + problem.chi == pytest.approx(timeopt.f2(3.0, 1.2), rel=1e-9)
    assert fuelopt.fuel_cost(1e4, 1.2, problem) == pytest.approx(3.0, rel=1e-12)


def test_coasting_costs_nothing():
    problem = fuelopt.FuelOptProblem(delta_L=3.0, eta=0.5)
    assert fuelopt.fuel_cost(0.0, 1.2, problem) < 1e-12


def test_short_transfer(fuel_case1):
    sol = fuel_case1
    assert sol.l0 == pytest.approx(10.20851, rel=1e-3)
    assert sol.J_norm == pytest.approx(0.61117, rel=1e-3)
    assert sol.n_arcs == 2
    assert sol.residual <= 1e-9
    assert sol.epsilon_path == (0.01,)
    lam = linmodel.costates_at(-0.25, sol.l0, sol.l1)
    npt.assert_allclose([lam.l_dp, lam.l_df, lam.l_dg], [3.82819, -5.05125, 0.37921], atol=5e-3)


def test_residual_vanishes_at_solution(fuel_case1):
    npt.assert_allclose(fuelopt.fuel_residual(fuel_case1.l0, fuel_case1.l1, fuel_case1.problem), 0.0, atol=1e-8)


def test_cost_scales_with_thrust(fuel_case1):
    problem = fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4, a_max=0.001)
    sol = fuelopt.solve_fuel_optimal(problem, seed=(fuel_case1.l0, fuel_case1.l1))
    assert sol.seed_source == "caller"
    assert sol.l0 == pytest.approx(fuel_case1.l0, rel=1e-8)
    assert sol.J == pytest.approx(0.001 * fuel_case1.J, rel=1e-8)
    assert sol.J_norm == pytest.approx(fuel_case1.J_norm, rel=1e-8)


def test_boundary_conditions_met(fuel_case1):
    res = fuelopt.boundary_residuals(fuel_case1)
    npt.assert_allclose([res["dp"], res["df"], res["dg"], res["dt_error"]], 0.0, atol=1e-8)


def test_mirrored_branch(fuel_case1):
    other = fuelopt.mirror(fuel_case1)
    assert other.problem.dt_f == -fuel_case1.problem.dt_f
    assert abs(fuelopt.boundary_residuals(other)["dt_error"]) < 1e-8


def test_control_profile(fuel_case1):
    profile = fuelopt.control_profile(fuel_case1, n_points=101)
    assert {"magnitude", "rho", "gamma_deg", "x", "y"} <= set(profile.columns)
    assert profile["magnitude"].iloc[50] < 1e-10
    assert profile["magnitude"].iloc[0] == pytest.approx(1.0, abs=1e-6)
    assert profile["magnitude"].iloc[-1] == pytest.approx(1.0, abs=1e-6)


def test_failure_lists_attempts():
    settings = FuelSolverSettings(retry_budget=0, residual_tol=1e-30)
    with pytest.raises(NonConvergenceError) as info:
        fuelopt.solve_fuel_optimal(fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4), settings=settings)
    assert len(info.value.history) == 2
    assert info.value.history[0].startswith("analytic-short")


def test_continuation_rejects_bad_target(fuel_case1):
    with pytest.raises(DomainError):
        fuelopt.continue_epsilon(fuel_case1, 0.0)


def test_continuation_already_at_target(fuel_case1):
    assert fuelopt.continue_epsilon(fuel_case1, 0.01) is fuel_case1


@pytest.mark.slow
def test_continuation_to_bang_bang(fuel_case1):
    sol = fuelopt.continue_epsilon(fuel_case1, 1e-6)
    assert sol.epsilon == pytest.approx(1e-6)
    assert sol.epsilon_path[0] == 0.01
    assert all(b < a for a, b in zip(sol.epsilon_path, sol.epsilon_path[1:]))
    assert sol.J_norm == pytest.approx(0.61131, abs=5e-4)
    assert sol.n_arcs == 2


@pytest.mark.slow
def test_medium_transfer_from_tabulated_costates():
    problem = fuelopt.FuelOptProblem(delta_L=8.0, eta=0.6, a_max=0.001)
    sol = fuelopt.solve_fuel_optimal(problem, seed=(CASE2_L0, CASE2_L1))
    assert sol.l0 == pytest.approx(0.10688, rel=1e-3)
    assert sol.J_norm == pytest.approx(0.36119, rel=1e-3)


@pytest.mark.slow
def test_long_transfer_from_tabulated_costates():
    problem = fuelopt.FuelOptProblem(delta_L=50.0, eta=0.8, a_max=0.001)
    sol = fuelopt.solve_fuel_optimal(problem, seed=(CASE3_L0, CASE3_L1))
    assert sol.l0 == pytest.approx(0.01574, rel=2e-3)
    assert sol.J_norm == pytest.approx(0.20261, rel=2e-3)
    # burns only in the outer part of the transfer
    assert fuelopt.switching_rho(0.0, sol.l0, sol.l1) > 0
    assert math.isclose(sol.l1, CASE3_L1, abs_tol=0.1)
    # the smoothed throttle merges short coasts; the bang-bang limit shows four burns
    bang = fuelopt.continue_epsilon(sol, 1e-6)
    assert bang.n_arcs == 4
    _, profile = fuelopt.count_burn_arcs(bang.l0, bang.l1, bang.delta_L)
    assert profile.signs == (-1, 1, -1, 1, -1, 1, -1)


def test_seed_only_tries_the_caller_seed(monkeypatch):
    def stall(*args, **kwargs):
        raise NonConvergenceError("stalled", residual=1.0)

    monkeypatch.setattr(fuelopt, "hybrid_solve", stall)
    problem = fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4)
    with pytest.raises(NonConvergenceError) as info:
        fuelopt.solve_fuel_optimal(problem, seed=(10.0, 2.0), seed_only=True)
    assert len(info.value.history) == 1
    assert info.value.history[0].startswith("caller")


def test_seed_only_needs_a_seed():
    with pytest.raises(DomainError):
        fuelopt.solve_fuel_optimal(fuelopt.FuelOptProblem(delta_L=0.5, eta=0.4), seed_only=True)


def test_continuation_never_reseeds(monkeypatch, fuel_case1):
    calls = []

    def solve(problem, seed=None, atlas_grid=None, settings=None, seed_only=False):
        calls.append((problem.epsilon, seed, seed_only))
        raise NonConvergenceError("stalled")

    monkeypatch.setattr(fuelopt, "solve_fuel_optimal", solve)
    with pytest.raises(ContinuationError) as info:
        fuelopt.continue_epsilon(fuel_case1, 1e-6, max_refinements=2)
    assert info.value.last_solution is fuel_case1
    assert len(calls) == 3
    assert all(seed == (fuel_case1.l0, fuel_case1.l1) and only for _, seed, only in calls)
    # each refinement shortens the step: 10, sqrt(10), 10**0.25
    npt.assert_allclose([eps for eps, _, _ in calls], [1e-3, 0.01 / 10**0.5, 0.01 / 10**0.25])


@pytest.mark.parametrize("module, fixture", [(fuelopt, "fuel_case1"), (timeopt, "time_case1")])
def test_control_components_are_symmetric(request, module, fixture):
    sol = request.getfixturevalue(fixture)
    profile = module.control_profile(sol, n_points=201)
    a_max = sol.a_max
    a_r = profile["a_r"].to_numpy()
    a_th = profile["a_th"].to_numpy()
    npt.assert_allclose(profile["L"].to_numpy(), -profile["L"].to_numpy()[::-1], atol=1e-15)
    # a_r is even in L, a_th odd
    npt.assert_allclose(a_r, a_r[::-1], atol=1e-9 * a_max)
    npt.assert_allclose(a_th, -a_th[::-1], atol=1e-9 * a_max)


def test_short_transfer_asymptotics():
    sol = fuelopt.solve_fuel_optimal(fuelopt.FuelOptProblem(delta_L=0.25, eta=0.5))
    assert sol.J_norm == pytest.approx(0.5, rel=0.02)
    assert sol.l0 == pytest.approx(2.0 / (0.5 * 0.25), rel=0.08)


@pytest.mark.slow
def test_long_transfer_asymptotics():
    sol = fuelopt.solve_fuel_optimal(fuelopt.FuelOptProblem(delta_L=100.0, eta=0.5))
    assert sol.J_norm == pytest.approx(0.5, rel=0.02)
    assert sol.l0 == pytest.approx(2.0 / (3.0 * 0.5 * 100.0), rel=0.08)
