"""Switching regions and the optimally controlled simulation.

The owner switches protection p -> 1-p exactly where the obstacle binds,

    v(s, i; a, p) >= v(s, i; a, 1-p) + g(s, i) - tol,

while the hacker flips a at the times of its schedule. The controlled
simulation interleaves both on the simulator's time grid (attack flip
first, then the owner decision) and charges e^{-delta t} g at every
owner switch.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from attacks import AttackSchedule
from model import ALL_REGIMES, ConfigError, ModelParams, Regime, SwitchCosts, switch_cost_arrays
from sde import PathConfig, SwitchEvent, Trajectory, simulate
from switching_constants import SWITCH_TOL
from value_source import GridValueSource, ValueSource
from vi_grid import Grid

__all__ = [
    "RegionMask",
    "SmoothFitReport",
    "ControlledResult",
    "OptimalSwitchingPolicy",
    "ConstantProtectionPolicy",
    "ThresholdPolicy",
    "switching_region",
    "all_switching_regions",
    "smooth_fit_diagnostic",
    "simulate_controlled",
    "optimal_value",
    "policy_from_name",
]


# =============================================================================
# Policies
# =============================================================================

class OptimalSwitchingPolicy:
    """Switch where v(a,p) reaches v(a,1-p) + g, within a relative tolerance."""

    name = "optimal"

    def __init__(self, source: ValueSource, costs: SwitchCosts, tol: float = SWITCH_TOL):
        self.source = source
        self.costs = costs
        self.tol = tol

    def _gaps(self, s, i, a, p):
        s = np.asarray(s, dtype=float)
        values = self.source.regime_values(s, np.asarray(i, dtype=float))
        col = np.arange(len(s))
        stay = values[2 * a + p, col]
        g = switch_cost_arrays(self.costs, values, a, p)
        return stay - values[2 * a + 1 - p, col] - g, stay

    def gaps(self, s, i, a, p) -> np.ndarray:
        """v(a,p) - v(a,1-p) - g per point."""
        a = np.asarray(a, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        return self._gaps(s, i, a, p)[0]

    def decide(self, t, s, i, a, p):
        a = np.asarray(a, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        gap, stay = self._gaps(s, i, a, p)
        switch = gap >= -self.tol * np.maximum(np.abs(stay), 1e-12)
        return np.where(switch, 1 - p, p).astype(np.int8)


class ConstantProtectionPolicy:
    """Hold protection at one level (never = 0, always = 1)."""

    def __init__(self, level: int):
        if level not in (0, 1):
            raise ValueError(f"protection level must be 0 or 1, got {level}")
        self.level = int(level)
        self.name = "always" if self.level else "never"

    def decide(self, t, s, i, a, p):
        return np.full(len(p), self.level, dtype=np.int8)


class ThresholdPolicy:
    """Protect while the infected fraction is at or above ``level``."""

    def __init__(self, level: float):
        if not 0.0 <= level <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {level}")
        self.level = float(level)
        self.name = f"threshold:{level:g}"

    def decide(self, t, s, i, a, p):
        return (np.asarray(i) >= self.level).astype(np.int8)


# =============================================================================
# Regions
# =============================================================================

@dataclass
class RegionMask:
    """Switching region of one regime over the grid nodes."""

    regime: Regime
    grid: Grid
    switching: np.ndarray
    tol: float

    @property
    def continuation(self) -> np.ndarray:
        return self.grid.mask() & ~self.switching

    @property
    def count(self) -> int:
        return int(self.switching.sum())


def switching_region(src: ValueSource, costs: SwitchCosts, a: int, p: int,
                     grid: Grid, tol: float = SWITCH_TOL) -> RegionMask:
    """Nodes where v(a,p) >= v(a,1-p) + g - tol."""
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    mask = grid.mask()
    s, i = grid.coords()
    s_nodes, i_nodes = s[mask], i[mask]
    values = src.regime_values(s_nodes, i_nodes)
    count = len(s_nodes)
    a_arr = np.full(count, a, dtype=np.int64)
    p_arr = np.full(count, p, dtype=np.int64)
    g = switch_cost_arrays(costs, values, a_arr, p_arr)
    regime = Regime(a, p)
    inside = values[regime.index] >= values[regime.flip_p().index] + g - tol

    switching = np.zeros(mask.shape, dtype=bool)
    switching[mask] = inside
    return RegionMask(regime=regime, grid=grid, switching=switching, tol=tol)


def all_switching_regions(src: ValueSource, costs: SwitchCosts, grid: Grid,
                          tol: float = SWITCH_TOL) -> list[RegionMask]:
    return [switching_region(src, costs, r.a, r.p, grid, tol) for r in ALL_REGIMES]


class SmoothFitReport(NamedTuple):
    nodes: list
    mismatch: np.ndarray
    max_mismatch: float
    mean_mismatch: float


def _gradient(v: np.ndarray, grid: Grid, j: int, k: int) -> np.ndarray:
    """Central differences, one-sided where a neighbour leaves D."""
    h = grid.spacing
    out = np.empty(2)
    for axis, (dj, dk) in enumerate(((1, 0), (0, 1))):
        fwd = grid.contains(j + dj, k + dk)
        bwd = grid.contains(j - dj, k - dk)
        if fwd and bwd:
            out[axis] = (v[j + dj, k + dk] - v[j - dj, k - dk]) / (2 * h)
        elif fwd:
            out[axis] = (v[j + dj, k + dk] - v[j, k]) / h
        else:
            out[axis] = (v[j, k] - v[j - dj, k - dk]) / h
    return out


def smooth_fit_diagnostic(src: ValueSource, mask: RegionMask, grid: Grid) -> SmoothFitReport:
    """|grad v(a,p) - grad v(a,1-p)| at the switching nodes that border continuation.

    Raises:
        ValueError: ``src`` is not grid-backed
    """
    if not isinstance(src, GridValueSource):
        raise ValueError("smooth-fit diagnostic needs a grid-backed value source")
    v_here = src.field.regime(mask.regime)
    v_there = src.field.regime(mask.regime.flip_p())
    cont = mask.continuation

    nodes = []
    mismatch = []
    for j, k in grid.nodes():
        if not mask.switching[j, k]:
            continue
        neighbours = ((j + 1, k), (j - 1, k), (j, k + 1), (j, k - 1))
        if not any(grid.contains(jj, kk) and cont[jj, kk] for jj, kk in neighbours):
            continue
        diff = _gradient(v_here, grid, j, k) - _gradient(v_there, grid, j, k)
        nodes.append((j, k))
        mismatch.append(float(np.hypot(diff[0], diff[1])))

    mismatch = np.asarray(mismatch, dtype=float)
    return SmoothFitReport(
        nodes=nodes,
        mismatch=mismatch,
        max_mismatch=float(mismatch.max()) if mismatch.size else 0.0,
        mean_mismatch=float(mismatch.mean()) if mismatch.size else 0.0,
    )


# =============================================================================
# Controlled simulation
# =============================================================================

class ControlledResult(NamedTuple):
    trajectory: Trajectory
    switch_log: list[SwitchEvent]
    cost: float


def simulate_controlled(params: ModelParams, src: ValueSource, costs: SwitchCosts,
                        schedule: AttackSchedule, config: PathConfig,
                        tol: float = SWITCH_TOL) -> ControlledResult:
    """One path under the optimal switching rule extracted from ``src``."""
    policy = OptimalSwitchingPolicy(src, costs, tol)
    trajectory = simulate(params, schedule, policy, config, costs=costs, value_source=src)
    return ControlledResult(trajectory, trajectory.switch_log, trajectory.cost)


def optimal_value(src: ValueSource, costs: SwitchCosts, state, regime: Regime) -> float:
    """min(v(a,p), v(a,1-p) + g) at ``state``: the optimal cost from (state, regime)."""
    values = src.regime_values(np.array([state.s]), np.array([state.i]))
    g = switch_cost_arrays(costs, values, np.array([regime.a]), np.array([regime.p]))[0]
    stay = float(values[regime.index, 0])
    move = float(values[regime.flip_p().index, 0]) + float(g)
    return min(stay, move)


def policy_from_name(name: str, src=None, costs=None):
    """Build a policy from its command-line name.

    Names: ``optimal``, ``never``, ``always``, ``threshold:<level>``.

    Raises:
        ConfigError: Unknown name, bad threshold, or ``optimal`` without a value source
    """
    if name == "never":
        return ConstantProtectionPolicy(0)
    if name == "always":
        return ConstantProtectionPolicy(1)
    if name == "optimal":
        if src is None or costs is None:
            raise ConfigError("policy 'optimal' needs a value source (--value-source)")
        return OptimalSwitchingPolicy(src, costs)
    if name.startswith("threshold:"):
        try:
            return ThresholdPolicy(float(name.split(":", 1)[1]))
        except ValueError as e:
            raise ConfigError(f"bad threshold policy {name!r}: {e}")
    raise ConfigError(f"unknown policy {name!r} (expected optimal, never, always or threshold:<v>)")
