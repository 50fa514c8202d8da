"""Tests for policy.py - switching rules, regions and controlled paths."""

import numpy as np
import pytest

from attacks import constant_attack
from model import ALL_REGIMES, ConfigError, Regime, State, SwitchCosts
from policy import (
    ConstantProtectionPolicy,
    OptimalSwitchingPolicy,
    ThresholdPolicy,
    all_switching_regions,
    optimal_value,
    policy_from_name,
    simulate_controlled,
    smooth_fit_diagnostic,
    switching_region,
)
from sde import PathConfig
from value_source import GridValueSource
from vi_grid import Grid, PsorOptions, ValueField, solve_psor


def protect_pays_field(n: int = 4) -> GridValueSource:
    """v = 1 without protection and 0.5 with it, in every state."""
    grid = Grid(n)
    values = np.empty((4, n + 1, n + 1))
    for regime in ALL_REGIMES:
        values[regime.index] = 0.5 if regime.p else 1.0
    return GridValueSource(ValueField(grid, values))


class TestPolicies:
    """Decision rules."""

    def test_optimal_switches_on(self):
        """Unprotected paths switch on, protected ones stay."""
        policy = OptimalSwitchingPolicy(protect_pays_field(), SwitchCosts.constant(0.002))
        decided = policy.decide(0.0, np.array([0.5, 0.5]), np.array([0.2, 0.2]),
                                np.array([1, 1]), np.array([0, 1]))
        assert list(decided) == [1, 1]
        gaps = policy.gaps(np.array([0.5]), np.array([0.2]), np.array([0]), np.array([0]))
        assert gaps[0] == pytest.approx(0.498)

    def test_constant_and_threshold(self):
        """never/always hold a level; threshold protects from i >= level."""
        p = np.array([0, 1, 0])
        i = np.array([0.05, 0.2, 0.4])
        assert list(ConstantProtectionPolicy(0).decide(0, i, i, p, p)) == [0, 0, 0]
        assert list(ConstantProtectionPolicy(1).decide(0, i, i, p, p)) == [1, 1, 1]
        assert list(ThresholdPolicy(0.2).decide(0, i, i, p, p)) == [0, 1, 1]

    def test_policy_from_name(self):
        """Command-line names map to policies."""
        assert policy_from_name("never").name == "never"
        assert policy_from_name("always").name == "always"
        assert policy_from_name("threshold:0.1").level == 0.1
        source = protect_pays_field()
        assert isinstance(policy_from_name("optimal", source, SwitchCosts.constant(0.1)),
                          OptimalSwitchingPolicy)

    @pytest.mark.parametrize("name", ["sometimes", "threshold:abc", "threshold:2", "optimal"])
    def test_bad_names(self, name):
        """Unknown names, bad thresholds and optimal without values are config errors."""
        with pytest.raises(ConfigError):
            policy_from_name(name)


class TestRegions:
    """Switching regions."""

    def test_regions_of_constant_field(self):
        """Every unprotected node switches; no protected node does."""
        grid = Grid(4)
        regions = all_switching_regions(protect_pays_field(), SwitchCosts.constant(0.002), grid)
        by_regime = {mask.regime: mask for mask in regions}
        assert by_regime[Regime(1, 0)].count == grid.node_count
        assert by_regime[Regime(0, 1)].count == 0
        assert by_regime[Regime(0, 1)].continuation.sum() == grid.node_count

    def test_bad_tolerance(self):
        """Tolerance must be positive."""
        with pytest.raises(ValueError):
            switching_region(protect_pays_field(), SwitchCosts.constant(0.1), 0, 0, Grid(4), tol=0.0)

    def test_regions_on_solved_field(self, scenario1_params, constant_costs):
        """On a solved field switching nodes satisfy the obstacle with equality."""
        field = solve_psor(Grid(8), scenario1_params, constant_costs, PsorOptions(tol=1e-11))
        source = GridValueSource(field)
        for mask in all_switching_regions(source, constant_costs, field.grid):
            here = field.regime(mask.regime)[mask.switching]
            there = field.regime(mask.regime.flip_p())[mask.switching]
            np.testing.assert_allclose(here, there + 0.002, atol=1e-8)

    def test_smooth_fit_diagnostic(self, scenario1_params, constant_costs):
        """Mismatch is reported at frontier nodes only."""
        field = solve_psor(Grid(8), scenario1_params, constant_costs)
        source = GridValueSource(field)
        for mask in all_switching_regions(source, constant_costs, field.grid):
            report = smooth_fit_diagnostic(source, mask, field.grid)
            assert len(report.nodes) == len(report.mismatch)
            assert all(mask.switching[j, k] for j, k in report.nodes)
            assert np.all(np.isfinite(report.mismatch))
            assert report.max_mismatch >= report.mean_mismatch >= 0.0

    def test_smooth_fit_needs_grid(self):
        """Network-backed sources are rejected."""
        from dgm import DgmConfig, init_networks
        from value_source import NetworkValueSource

        source = NetworkValueSource(init_networks(DgmConfig(widths=(2, 4, 1))))
        mask = switching_region(protect_pays_field(), SwitchCosts.constant(0.1), 0, 0, Grid(4))
        with pytest.raises(ValueError):
            smooth_fit_diagnostic(source, mask, Grid(4))


class TestOptimalValue:
    """min(stay, switch) at a state."""

    def test_min_of_stay_and_move(self):
        """From p = 0 switching is cheaper; from p = 1 staying is."""
        source = protect_pays_field()
        costs = SwitchCosts.constant(0.002)
        assert optimal_value(source, costs, State(0.5, 0.2), Regime(0, 0)) == pytest.approx(0.502)
        assert optimal_value(source, costs, State(0.5, 0.2), Regime(0, 1)) == pytest.approx(0.5)


class TestSimulateControlled:
    """Optimally controlled paths."""

    def test_single_switch_at_start(self, scenario1_params):
        """The owner protects at t = 0 and then stays protected."""
        costs = SwitchCosts.constant(0.002)
        result = simulate_controlled(scenario1_params, protect_pays_field(), costs,
                                     constant_attack(1), PathConfig(horizon=5.0))
        owner = [e for e in result.switch_log if e.track == "protection"]
        assert len(owner) == 1
        assert owner[0].time == 0.0
        assert owner[0].value_gap == pytest.approx(0.498)
        assert np.all(result.trajectory.p == 1)
        assert result.cost >= 0.002

    def test_cost_matches_single_path_estimate(self, scenario1_params, constant_costs):
        """The controlled path cost equals a one-path Monte Carlo estimate on the same seed."""
        from mc_value import evaluate

        source = GridValueSource(solve_psor(Grid(8), scenario1_params, constant_costs))
        config = PathConfig(horizon=20.0, seed=7)
        result = simulate_controlled(scenario1_params, source, constant_costs,
                                     constant_attack(1), config)
        estimate = evaluate(scenario1_params, OptimalSwitchingPolicy(source, constant_costs),
                            constant_attack(1), n_paths=1, horizon=config.horizon,
                            config=config, costs=constant_costs, value_source=source)
        assert result.cost == pytest.approx(estimate.path_costs[0], rel=1e-12)

    def test_switches_lie_in_switching_region(self, scenario1_params, scenario1_costs):
        """Every owner switch happens where staying costs at least switching."""
        source = GridValueSource(solve_psor(Grid(16), scenario1_params, scenario1_costs))
        policy = OptimalSwitchingPolicy(source, scenario1_costs)
        for seed in range(5):
            result = simulate_controlled(scenario1_params, source, scenario1_costs,
                                         constant_attack(1), PathConfig(seed=seed))
            traj = result.trajectory
            for event in traj.protection_switches:
                k = int(np.argmin(np.abs(traj.times - event.time)))
                s, i = np.array([traj.s[k]]), np.array([traj.i[k]])
                a, p = np.array([traj.a[k]]), np.array([event.from_level])
                stay = source.regime_values(s, i)[2 * traj.a[k] + event.from_level, 0]
                gap = policy.gaps(s, i, a, p)[0]
                assert gap >= -policy.tol * max(abs(stay), 1e-12)


@pytest.mark.slow
class TestSmoothFitRefinement:
    """Gradient mismatch at the frontier shrinks under refinement."""

    def test_mean_mismatch_nonincreasing(self, scenario1_params, scenario1_costs):
        """Mean mismatch at n = 64 is no larger than at n = 32."""
        means = []
        for n in (32, 64):
            field = solve_psor(Grid(n), scenario1_params, scenario1_costs)
            source = GridValueSource(field)
            mask = switching_region(source, scenario1_costs, 1, 0, field.grid)
            means.append(smooth_fit_diagnostic(source, mask, field.grid).mean_mismatch)
        assert means[1] <= means[0] + 1e-12
