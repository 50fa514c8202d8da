"""Monte Carlo evaluation of the discounted protection cost.

Estimates

    E[ int_0^T e^{-delta t} (c_I I_t + f(S_t, p_t)) dt + sum e^{-delta tau} g ]

for any policy and attack model, by running the shared path engine of
``sde``. The infinite-horizon objective is truncated at T; the
truncation error is at most (c_I + c_V kappa) e^{-delta T} / delta,
which every estimate reports next to its 95% half-width.

Compared policies run with the same master seed, so path j sees the same
noise and the same attack schedule under each of them (common random
numbers). Paths are split into fixed chunks, optionally run in parallel
with joblib, and reduced in path order, so results do not depend on the
worker count.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from joblib import Parallel, delayed

from attacks import AttackSchedule
from console_utils import progress_bar
from model import ConfigError, ModelParams, SwitchCosts
from sde import PathBatch, PathConfig, simulate_paths
from switching_constants import CONFIDENCE_Z, MC_HORIZON

__all__ = [
    "McEstimate",
    "PairedDifference",
    "Comparison",
    "tail_bound",
    "evaluate",
    "compare_policies",
    "terminal_infection_stats",
    "efficacy_ratio",
]

CHUNK_SIZE = 1000


@dataclass
class McEstimate:
    policy: str
    mean: float
    se: float
    tail_bound: float
    n_paths: int
    seed: int
    horizon: float
    path_costs: np.ndarray = field(repr=False, default=None)
    terminal_i: np.ndarray = field(repr=False, default=None)
    switch_counts: np.ndarray = field(repr=False, default=None)

    @property
    def half_width(self) -> float:
        """95% confidence half-width."""
        return CONFIDENCE_Z * self.se


class PairedDifference(NamedTuple):
    policy: str
    reference: str
    mean: float
    se: float


@dataclass
class Comparison:
    estimates: dict
    differences: list


def tail_bound(params: ModelParams, horizon: float) -> float:
    return (params.c_I + params.c_V * params.kappa) * np.exp(-params.delta * horizon) / params.delta


def _standard_error(samples: np.ndarray, antithetic: bool) -> float:
    """SE of the mean; antithetic pairs are averaged before estimating spread."""
    n = len(samples)
    if antithetic and n >= 2:
        half = n // 2
        pairs = 0.5 * (samples[:half] + samples[half:2 * half])
        units = np.concatenate([pairs, samples[2 * half:]])
    else:
        units = samples
    if len(units) < 2:
        return 0.0
    return float(np.std(units, ddof=1) / np.sqrt(len(units)))


def _run_batches(params, policy, attack_model, n_paths, config, costs, value_source,
                 antithetic, n_jobs, verbose) -> list[PathBatch]:
    chunks = [np.arange(start, min(start + CHUNK_SIZE, n_paths))
              for start in range(0, n_paths, CHUNK_SIZE)]

    def run(indices):
        return simulate_paths(
            params, attack_model, policy, config,
            n_paths=n_paths, path_indices=indices, costs=costs,
            value_source=value_source, antithetic=antithetic, keep_paths=False,
        )

    if n_jobs == 1:
        batches = []
        with progress_bar(len(chunks), "paths", enabled=verbose) as bar:
            for indices in chunks:
                batches.append(run(indices))
                bar.update(1)
        return batches
    return Parallel(n_jobs=n_jobs, backend="threading")(delayed(run)(c) for c in chunks)


def evaluate(
    params: ModelParams,
    policy,
    attack_model: AttackSchedule,
    n_paths: int,
    horizon: float = MC_HORIZON,
    config: Optional[PathConfig] = None,
    costs: Optional[SwitchCosts] = None,
    value_source=None,
    antithetic: bool = False,
    n_jobs: int = 1,
    name: Optional[str] = None,
    verbose: bool = False,
) -> McEstimate:
    """Mean discounted cost of ``policy`` over ``n_paths`` paths.

    Args:
        params: Model parameters
        policy: Protection policy (see ``sde.ProtectionPolicy``)
        attack_model: Attack schedule; Poisson schedules are redrawn per path
        n_paths: Number of paths (>= 1)
        horizon: Truncation horizon T, measured from ``config.t0``
        config: Step, master seed and initial condition (horizon is overridden)
        costs: Switching costs
        value_source: Needed for proportional switching costs
        antithetic: Pair path j with the negated noise of path j + n/2
        n_jobs: joblib workers
        name: Label stored in the estimate (default: the policy's ``name``)

    Returns:
        McEstimate
    """
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}", key="paths")
    if not horizon > 0:
        raise ConfigError(f"horizon must be > 0, got {horizon}", key="horizon")
    config = (config or PathConfig()).replace(horizon=(config.t0 if config else 0.0) + horizon)

    batches = _run_batches(params, policy, attack_model, n_paths, config, costs,
                           value_source, antithetic, n_jobs, verbose)
    path_costs = np.concatenate([b.costs for b in batches])
    terminal_i = np.concatenate([b.terminal_i for b in batches])
    switches = np.concatenate([b.protection_switch_counts() for b in batches])

    return McEstimate(
        policy=name or getattr(policy, "name", type(policy).__name__),
        mean=float(np.mean(path_costs)),
        se=_standard_error(path_costs, antithetic),
        tail_bound=float(tail_bound(params, horizon)),
        n_paths=n_paths,
        seed=config.seed,
        horizon=horizon,
        path_costs=path_costs,
        terminal_i=terminal_i,
        switch_counts=switches,
    )


def compare_policies(params: ModelParams, policies: dict, attack_model: AttackSchedule,
                     n_paths: int, horizon: float = MC_HORIZON,
                     config: Optional[PathConfig] = None, costs: Optional[SwitchCosts] = None,
                     value_source=None, antithetic: bool = False,
                     n_jobs: int = 1) -> Comparison:
    """Evaluate several named policies with common random numbers.

    The first policy is the reference; each other policy gets the paired
    difference (policy - reference) with its standard error.
    """
    if not policies:
        raise ConfigError("no policies to compare")
    estimates = {
        label: evaluate(params, policy, attack_model, n_paths, horizon, config, costs,
                        value_source, antithetic, n_jobs, name=label)
        for label, policy in policies.items()
    }
    labels = list(estimates)
    reference = estimates[labels[0]]
    differences = []
    for label in labels[1:]:
        diff = estimates[label].path_costs - reference.path_costs
        differences.append(PairedDifference(
            policy=label,
            reference=labels[0],
            mean=float(np.mean(diff)),
            se=_standard_error(diff, antithetic),
        ))
    return Comparison(estimates=estimates, differences=differences)


def terminal_infection_stats(estimate: McEstimate) -> tuple[float, float]:
    """Mean terminal infected fraction and its standard error."""
    return float(np.mean(estimate.terminal_i)), _standard_error(estimate.terminal_i, False)


def efficacy_ratio(protected: McEstimate, baseline: McEstimate) -> float:
    """Mean terminal I under ``protected`` divided by that under ``baseline``."""
    base = float(np.mean(baseline.terminal_i))
    if base == 0.0:
        return float("nan")
    return float(np.mean(protected.terminal_i)) / base
