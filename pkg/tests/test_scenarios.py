"""Scenario-level behaviour: grid against DGM and Monte Carlo, owner patterns, efficacy."""

from collections import Counter

import numpy as np
import pytest

from config_service import ConfigService
from dgm import DgmConfig, train
from mc_value import compare_policies, efficacy_ratio, terminal_infection_stats
from model import Regime, State, SwitchCosts
from policy import ConstantProtectionPolicy, OptimalSwitchingPolicy, optimal_value, simulate_controlled
from run_switching import _owner_pattern
from switching_constants import MC_HORIZON
from value_source import GridValueSource, NetworkValueSource
from vi_grid import Grid, decoupled_solve, solve_psor

SEEDS = 100


@pytest.fixture(scope="module")
def scenario1_run():
    return ConfigService.from_preset("scenario1").config


@pytest.fixture(scope="module")
def scenario1_source(scenario1_run):
    field = solve_psor(Grid(64), scenario1_run.params, scenario1_run.costs)
    return GridValueSource(field)


@pytest.mark.slow
class TestDgmAgainstGrid:
    """Decoupled network solution against the grid."""

    def test_relative_gap(self, sir_params):
        """Regime (1,0) agrees with the n = 64 grid to 5% in sup norm on 200 points."""
        result = train(DgmConfig(penalty_weight=0.0, seed=0), sir_params,
                       SwitchCosts.constant(1e6))
        grid = GridValueSource(decoupled_solve(Grid(64), sir_params))
        net = NetworkValueSource(result.nets)

        rng = np.random.default_rng(11)
        u, w = rng.random(200), rng.random(200)
        fold = u + w > 1.0
        s, i = np.where(fold, 1.0 - u, u), np.where(fold, 1.0 - w, w)
        reference = grid.value(s, i, 1, 0)
        gap = np.max(np.abs(net.value(s, i, 1, 0) - reference))
        assert gap <= 0.05 * np.max(np.abs(reference))


@pytest.mark.slow
class TestMonteCarloAgainstGrid:
    """Simulated optimal cost against the grid value."""

    def test_optimal_estimate(self, scenario1_run, scenario1_source):
        """The optimal estimate matches the grid value and beats never and always."""
        run = scenario1_run
        coarse = GridValueSource(solve_psor(Grid(32), run.params, run.costs))
        start, regime = run.initial_state(), run.initial_regime()
        value = optimal_value(scenario1_source, run.costs, start, regime)
        refinement = abs(value - optimal_value(coarse, run.costs, start, regime))

        comparison = compare_policies(
            run.params,
            {
                "optimal": OptimalSwitchingPolicy(scenario1_source, run.costs),
                "never": ConstantProtectionPolicy(0),
                "always": ConstantProtectionPolicy(1),
            },
            run.attack_schedule(), n_paths=10_000, horizon=MC_HORIZON,
            config=run.path_config(), costs=run.costs, value_source=scenario1_source,
        )
        optimal = comparison.estimates["optimal"]
        allowance = optimal.tail_bound + 3 * optimal.se + 4 * refinement + 0.05 * value
        assert abs(optimal.mean - value) <= allowance
        for diff in comparison.differences:
            assert diff.mean > 2 * diff.se


@pytest.mark.slow
class TestOwnerPatterns:
    """Owner switch patterns over seed sweeps."""

    def test_scenario1_protects_then_releases(self, scenario1_run, scenario1_source):
        """The modal pattern is 0→1→0 with both switches inside the horizon."""
        run = scenario1_run
        patterns = Counter()
        inside = 0
        for seed in range(SEEDS):
            traj = simulate_controlled(run.params, scenario1_source, run.costs,
                                       run.attack_schedule(seed),
                                       run.path_config(seed=seed)).trajectory
            pattern = _owner_pattern(traj)
            patterns[pattern] += 1
            if pattern == "0→1→0" and all(0 < e.time < run.horizon
                                          for e in traj.protection_switches):
                inside += 1
        assert patterns.most_common(1)[0][0] == "0→1→0"
        assert inside > SEEDS // 2

    def test_scenario2_narrated_order(self):
        """Some seed protects before the first attack flip and releases between the flips."""
        run = ConfigService.from_preset("scenario2_narrated").config
        source = GridValueSource(solve_psor(Grid(64), run.params, run.costs))
        first, second = run.attack_times
        hits = 0
        for seed in range(SEEDS):
            switches = simulate_controlled(run.params, source, run.costs,
                                           run.attack_schedule(seed),
                                           run.path_config(seed=seed)).trajectory.protection_switches
            if (len(switches) == 2 and switches[0].to_level == 1
                    and switches[0].time < first < switches[1].time < second):
                hits += 1
        assert hits >= 1


@pytest.mark.slow
class TestEfficacy:
    """Terminal infection with and without optimal protection."""

    def test_terminal_infection_halved(self, scenario1_run, scenario1_source):
        """Optimal protection ends near 30% infected against about 60% unprotected."""
        run = scenario1_run
        estimates = compare_policies(
            run.params,
            {"optimal": OptimalSwitchingPolicy(scenario1_source, run.costs),
             "never": ConstantProtectionPolicy(0)},
            run.attack_schedule(), n_paths=1000, horizon=run.horizon,
            config=run.path_config(), costs=run.costs, value_source=scenario1_source,
        ).estimates
        assert efficacy_ratio(estimates["optimal"], estimates["never"]) == pytest.approx(0.5, abs=0.15)
        assert terminal_infection_stats(estimates["optimal"])[0] == pytest.approx(0.3, abs=0.15)
        assert terminal_infection_stats(estimates["never"])[0] == pytest.approx(0.6, abs=0.15)


class TestScenarioPresets:
    """Fast checks on the scenario-1 preset field."""

    def test_preset_field_positive(self, scenario1_run):
        """The preset solve stays off the trivial zero field."""
        field = solve_psor(Grid(16), scenario1_run.params, scenario1_run.costs)
        start = State(1.0, 0.0)
        assert field.at_node(Regime(1, 0), 16, 0) > 0.0
        assert optimal_value(GridValueSource(field), scenario1_run.costs, start, Regime(1, 0)) > 0.0
