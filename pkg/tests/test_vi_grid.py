"""Tests for vi_grid.py - stencils and the projected SOR switching solver."""

import numpy as np
import pytest

from model import ConfigError, ConvergenceError, Regime, SwitchCosts, never_switch_bound
from oracles import time_marching_oracle
from vi_grid import (
    Grid,
    PsorOptions,
    build_stencil,
    decoupled_solve,
    lipschitz_estimate,
    residual_report,
    solve_psor,
)


@pytest.fixture
def small_field(scenario1_params, constant_costs):
    return solve_psor(Grid(8), scenario1_params, constant_costs, PsorOptions(tol=1e-10))


class TestGrid:
    """Triangular grid layout."""

    def test_node_count(self):
        """n = 64 has 65*66/2 nodes."""
        grid = Grid(64)
        assert grid.node_count == 2145
        assert len(grid.nodes()) == 2145
        assert grid.mask().sum() == 2145

    def test_sweep_order(self):
        """Nodes come in lexicographic (j, k) order."""
        assert Grid(2).nodes() == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)]

    def test_invalid_size(self):
        """Non-positive or fractional n is rejected."""
        with pytest.raises(ConfigError):
            Grid(0)
        with pytest.raises(ConfigError):
            Grid(2.5)


class TestStencil:
    """Stencil coefficients against hand computation."""

    def test_monotone_interior(self, scenario1_params):
        """Node (0.5, 0.25), regime (1,1), n = 4."""
        # b_s = -0.0445, b_i = 0.025, diffusion/h^2 = 0.005
        stencil = build_stencil(Grid(4), (2, 1), Regime(1, 1), scenario1_params)
        expected = {(-1, 0): 0.178, (0, 1): 0.1, (1, -1): 0.005, (-1, 1): 0.005}
        assert set(stencil.neighbors) == set(expected)
        for offset, value in expected.items():
            assert stencil.neighbors[offset] == pytest.approx(value, rel=1e-12)
        assert stencil.diag == pytest.approx(0.488, rel=1e-12)
        assert stencil.source == pytest.approx(0.00325, rel=1e-12)

    def test_centered_interior(self, scenario1_params):
        """Same point on n = 8 with the centered cross stencil."""
        stencil = build_stencil(Grid(8), (4, 2), Regime(1, 1), scenario1_params,
                                cross_scheme="centered")
        expected = {
            (-1, 0): 0.376, (1, 0): 0.02, (0, 1): 0.22, (0, -1): 0.02,
            (1, 1): -0.01, (-1, -1): -0.01, (1, -1): 0.01, (-1, 1): 0.01,
        }
        for offset, value in expected.items():
            assert stencil.neighbors[offset] == pytest.approx(value, rel=1e-12)
        assert stencil.diag == pytest.approx(0.836, rel=1e-12)

    def test_hypotenuse_split(self, scenario1_params):
        """On s + i = 1 a positive i-drift is split along (-1, 1) and (-1, 0)."""
        stencil = build_stencil(Grid(4), (2, 2), Regime(1, 0), scenario1_params)
        assert stencil.neighbors[(-1, 1)] == pytest.approx(0.1 + 0.02)
        assert stencil.neighbors[(-1, 0)] == pytest.approx(0.04)
        assert stencil.neighbors[(1, -1)] == pytest.approx(0.02)
        assert (0, 1) not in stencil.neighbors and (1, 0) not in stencil.neighbors

    def test_neighbours_stay_in_domain(self, scenario1_params):
        """No stencil of any regime reaches outside D."""
        grid = Grid(6)
        for scheme in ("monotone", "centered"):
            for regime in (Regime(0, 0), Regime(0, 1), Regime(1, 0), Regime(1, 1)):
                for j, k in grid.nodes():
                    stencil = build_stencil(grid, (j, k), regime, scenario1_params, scheme)
                    for dj, dk in stencil.neighbors:
                        assert grid.contains(j + dj, k + dk)


class TestSolvePsor:
    """Solver properties on scenario 1 with constant costs."""

    def test_complementarity(self, small_field, scenario1_params, constant_costs):
        """Converged fields satisfy the obstacle and complementarity to tol."""
        report = residual_report(small_field, small_field.grid, scenario1_params, constant_costs)
        assert report.max_complementarity <= 1e-10
        assert report.max_obstacle_violation <= 1e-10
        assert np.all(report.pde[:, report.mask] >= -1e-10)

    def test_value_bounds(self, small_field, scenario1_params, constant_costs):
        """0 <= v <= never-switch bound + max switching cost."""
        values = small_field.values[:, small_field.grid.mask()]
        assert values.min() >= 0.0
        assert values.max() <= never_switch_bound(scenario1_params) + constant_costs.max_constant()

    def test_matches_time_marching_oracle(self, scenario1_params):
        """n = 8 agrees with explicit dynamic programming."""
        field = solve_psor(Grid(8), scenario1_params, SwitchCosts.constant(0.002),
                           PsorOptions(tol=1e-12))
        oracle, dt = time_marching_oracle(8, scenario1_params, 0.002, 0.002)
        gap = np.max(np.abs(field.values - oracle))
        assert gap <= 2 * (1 / 8 + dt)
        assert gap <= 1e-8

    def test_obstacle_lowers_value(self, scenario1_params, constant_costs):
        """Switching can only lower the value against never switching."""
        grid = Grid(8)
        coupled = solve_psor(grid, scenario1_params, constant_costs)
        free = decoupled_solve(grid, scenario1_params)
        assert np.all(coupled.values <= free.values + 1e-8)

    def test_huge_cost_matches_decoupled(self, scenario1_params):
        """With prohibitive costs the coupled and decoupled solves agree."""
        grid = Grid(8)
        coupled = solve_psor(grid, scenario1_params, SwitchCosts.constant(1e6),
                             PsorOptions(tol=1e-11))
        free = decoupled_solve(grid, scenario1_params, PsorOptions(tol=1e-11))
        np.testing.assert_allclose(coupled.values, free.values, atol=1e-9)

    def test_centered_scheme_converges(self, scenario1_params, constant_costs):
        """The centered stencil also reaches tolerance."""
        field = solve_psor(Grid(8), scenario1_params, constant_costs,
                           PsorOptions(cross_scheme="centered", omega=1.0))
        report = residual_report(field, field.grid, scenario1_params, constant_costs)
        assert report.max_complementarity <= 1e-8
        assert field.metadata["cross_scheme"] == "centered"

    def test_coupling_lambda(self, scenario1_params, constant_costs):
        """The penalty-coupled system is solved to tolerance as well."""
        field = solve_psor(Grid(8), scenario1_params, constant_costs,
                           PsorOptions(coupling_lambda=0.5))
        report = residual_report(field, field.grid, scenario1_params, constant_costs)
        assert report.max_complementarity <= 1e-8

    def test_proportional_costs(self, scenario1_params, scenario1_costs):
        """Proportional costs are re-read from the iterate and converge."""
        field = solve_psor(Grid(8), scenario1_params, scenario1_costs)
        report = residual_report(field, field.grid, scenario1_params, scenario1_costs)
        assert report.max_complementarity <= 1e-8

    def test_warm_start(self, small_field, scenario1_params, constant_costs):
        """Restarting from a converged field needs at most a couple of sweeps."""
        again = solve_psor(Grid(8), scenario1_params, constant_costs,
                           PsorOptions(tol=1e-10, warm_start=small_field))
        assert again.metadata["sweeps"] <= 2

    def test_metadata(self, small_field, scenario1_params, constant_costs):
        """Metadata records the solve."""
        meta = small_field.metadata
        assert meta["solver"] == "grid"
        assert meta["n"] == 8
        assert meta["residual"] <= 1e-10
        assert len(meta["residual_history"]) == meta["sweeps"]

    def test_sweep_limit(self, scenario1_params, constant_costs):
        """Running out of sweeps raises with the residual history."""
        with pytest.raises(ConvergenceError) as info:
            solve_psor(Grid(8), scenario1_params, constant_costs,
                       PsorOptions(tol=1e-14, max_sweeps=2))
        assert len(info.value.history) == 2

    def test_bad_omega(self):
        """Relaxation outside (0, 1.9] is a config error."""
        with pytest.raises(ConfigError):
            PsorOptions(omega=2.0)

    def test_default_relaxation_converges(self, scenario1_params):
        """The default options solve the decoupled system with plain Gauss-Seidel."""
        field = decoupled_solve(Grid(8), scenario1_params)
        assert field.metadata["omega"] == 1.0
        assert field.metadata["residual"] <= PsorOptions().tol

    def test_over_relaxation_falls_back(self, scenario1_params, constant_costs):
        """An omega = 1.9 request still returns a field solved to tol."""
        options = PsorOptions(omega=1.9, max_sweeps=20_000)
        field = solve_psor(Grid(8), scenario1_params, constant_costs, options)
        assert field.metadata["omega_requested"] == 1.9
        assert field.metadata["omega"] in (1.0, 1.9)
        report = residual_report(field, field.grid, scenario1_params, constant_costs)
        assert report.max_complementarity <= 1e-8

    def test_proportional_costs_keep_positive_value(self, scenario1_params, scenario1_costs):
        """Proportional costs do not collapse the field onto v = 0."""
        grid = Grid(8)
        field = solve_psor(grid, scenario1_params, scenario1_costs)
        assert field.at_node(Regime(1, 0), grid.n, 0) > 0.0
        values = field.values[:, grid.mask()]
        assert values.min() >= 0.0
        assert values.max() <= never_switch_bound(scenario1_params) + 1e-12
        infected = grid.mask()
        infected[:, 0] = False
        assert np.all(field.values[:, infected] > 0.0)

    def test_infection_cost_monotone(self, scenario1_params, constant_costs):
        """Raising c_I never lowers the value."""
        grid = Grid(8)
        low = solve_psor(grid, scenario1_params, constant_costs, PsorOptions(tol=1e-10))
        high = solve_psor(grid, scenario1_params.with_changes(c_I=0.02), constant_costs,
                          PsorOptions(tol=1e-10))
        assert np.all(high.values >= low.values - 1e-9)

    def test_lipschitz_estimate(self, small_field):
        """Slopes are finite and non-negative for every regime."""
        slopes = lipschitz_estimate(small_field, small_field.grid)
        assert len(slopes) == 4
        assert all(np.isfinite(v) and v >= 0 for v in slopes.values())


@pytest.mark.integration
class TestBoundaryReproduction:
    """s = 0 edge in the rho = 0 case."""

    def test_edge_matches_datum(self, sir_params, constant_costs):
        """v(0, i) = c_I i / (delta + gamma) on the edge at n = 64."""
        grid = Grid(64)
        field = solve_psor(grid, sir_params, constant_costs)
        i = np.arange(grid.n + 1) / grid.n
        expected = sir_params.c_I * i / (sir_params.delta + sir_params.gamma)
        for regime in (Regime(0, 0), Regime(0, 1), Regime(1, 0), Regime(1, 1)):
            np.testing.assert_allclose(field.regime(regime)[0, :], expected, atol=1e-6)
        assert field.at_node(Regime(1, 0), 0, 64) == pytest.approx(0.0454545, abs=1e-6)


@pytest.mark.slow
class TestRefinement:
    """Grid refinement on scenario 1."""

    def test_differences_shrink(self, scenario1_params, scenario1_costs):
        """Successive differences at n = 16, 32, 64 decrease on the shared nodes."""
        fields = {n: solve_psor(Grid(n), scenario1_params, scenario1_costs) for n in (16, 32, 64)}
        coarse = Grid(16).mask()
        v16 = fields[16].values[:, coarse]
        v32 = fields[32].values[:, ::2, ::2][:, coarse]
        v64 = fields[64].values[:, ::4, ::4][:, coarse]
        first = np.max(np.abs(v16 - v32))
        second = np.max(np.abs(v32 - v64))
        assert second < first
