"""Projected SOR solver for the four-regime switching inequalities.

Discretizes, on the triangular grid over D = {s, i >= 0, s + i <= 1},

    min( c_I i + f(s,p) + L^{a,p} v - delta*v,  v(a,1-p) + g - v(a,p) ) = 0

for every regime (a, p), and solves the system with lexicographic
Gauss-Seidel sweeps and pointwise projection v <- min(v, v(a,1-p) + g).
Regimes are swept in the fixed order (0,0), (0,1), (1,0), (1,1);
proportional switching costs are re-read from the current iterate before
each regime sweep.

Without a warm start the iteration starts from the never-switch bound
(c_I + c_V*kappa)/delta, a supersolution in every regime, and descends
to the largest solution. With proportional costs v = 0 also solves the
discrete system, so starting from below would stall there.

The upwind matrix is not symmetric: over-relaxation (omega > 1) can
diverge. A run with omega > 1 that diverges or stalls is restarted once
with plain Gauss-Seidel (omega = 1).

Stencils:
    - first-order terms upwinded by drift sign; on the hypotenuse, where
      the forward neighbours leave D, a positive i-drift is split along
      (-1, 1) plus a non-positive s-drift (b_s + b_i <= 0 there)
    - "monotone": the diffusion only acts along (1, -1), so
      v_ss + v_ii - 2 v_si is the directional second difference
    - "centered": centered v_ss, v_ii and 4-point v_si; nodes next to the
      hypotenuse fall back to the directional form
    - on the s = 0 and i = 0 edges the diffusion vanishes: pure transport

Usage:
    from vi_grid import Grid, PsorOptions, solve_psor

    field = solve_psor(Grid(64), params, costs, PsorOptions(tol=1e-8))
"""

import time
from collections import defaultdict
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple, Optional

import numpy as np
from numba import jit

from console_utils import print_info, print_warning
from model import (
    ALL_REGIMES,
    ConfigError,
    ConvergenceError,
    ModelParams,
    Regime,
    SwitchCosts,
    drift_arrays,
    never_switch_bound,
    params_hash,
    running_cost_arrays,
)
from switching_constants import (
    CROSS_SCHEMES,
    PSOR_MAX_OMEGA,
    PSOR_MAX_SWEEPS,
    PSOR_OMEGA,
    PSOR_TOL,
)

__all__ = [
    "Grid",
    "Stencil",
    "PsorOptions",
    "ValueField",
    "ResidualReport",
    "build_stencil",
    "assemble_system",
    "solve_psor",
    "decoupled_solve",
    "residual_report",
    "lipschitz_estimate",
]

# Neighbour offsets (dj, dk); coefficient arrays use this order in their last axis
OFFSETS = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    dtype=np.int64,
)
OFFSET_INDEX = {(int(dj), int(dk)): m for m, (dj, dk) in enumerate(OFFSETS)}

# Regime index arithmetic: index = 2a + p
FLIP_P = np.array([1, 0, 3, 2])
FLIP_A = np.array([2, 3, 0, 1])

DIVERGENCE_FACTOR = 1e6


# =============================================================================
# Grid and stencils
# =============================================================================

@dataclass(frozen=True)
class Grid:
    """Triangular grid: nodes (j/n, k/n) with j, k >= 0 and j + k <= n."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"grid subdivisions must be a positive integer, got {self.n}", key="n")
        object.__setattr__(self, "n", int(self.n))

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def node_count(self) -> int:
        return (self.n + 1) * (self.n + 2) // 2

    def contains(self, j: int, k: int) -> bool:
        return j >= 0 and k >= 0 and j + k <= self.n

    def nodes(self) -> list[tuple[int, int]]:
        """All nodes in sweep order (lexicographic by (j, k))."""
        return [(j, k) for j in range(self.n + 1) for k in range(self.n + 1 - j)]

    def mask(self) -> np.ndarray:
        j, k = np.meshgrid(np.arange(self.n + 1), np.arange(self.n + 1), indexing="ij")
        return j + k <= self.n

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(s, i) coordinate arrays of shape (n+1, n+1); entries outside D are unused."""
        j, k = np.meshgrid(np.arange(self.n + 1), np.arange(self.n + 1), indexing="ij")
        return j / self.n, k / self.n

    def flags(self, j: int, k: int) -> tuple[bool, bool, bool]:
        """(on s=0 edge, on i=0 edge, on hypotenuse)."""
        return j == 0, k == 0, j + k == self.n


class Stencil(NamedTuple):
    """(delta - L)v at a node = diag*v - sum(coef * v_neighbour); source is c_I i + f."""

    diag: float
    neighbors: dict
    source: float


def build_stencil(grid: Grid, node: tuple[int, int], regime: Regime, params: ModelParams,
                  cross_scheme: str = "monotone") -> Stencil:
    j, k = node
    if not grid.contains(j, k):
        raise ValueError(f"node {node} is outside the grid")
    if cross_scheme not in CROSS_SCHEMES:
        raise ConfigError(f"unknown cross scheme {cross_scheme!r}", key="cross_scheme")

    n, h = grid.n, grid.spacing
    s, i = j / n, k / n
    r = (n - j - k) / n
    b_s, b_i = drift_arrays(s, i, regime.a, regime.p, params, r=r)
    diffusion = 0.5 * params.sigma ** 2 * s ** 2 * i ** 2

    coef: dict = defaultdict(float)
    on_hypotenuse = j + k == n

    if on_hypotenuse and b_i > 0:
        coef[(-1, 1)] += b_i / h
        lumped = min(b_s + b_i, 0.0)
        if lumped < 0:
            coef[(-1, 0)] += -lumped / h
    else:
        if b_s > 0:
            coef[(1, 0)] += b_s / h
        elif b_s < 0:
            coef[(-1, 0)] += -b_s / h
        if b_i > 0:
            coef[(0, 1)] += b_i / h
        elif b_i < 0:
            coef[(0, -1)] += -b_i / h

    if diffusion > 0:
        d = diffusion / h ** 2
        if cross_scheme == "centered" and j + k <= n - 2:
            for offset in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                coef[offset] += d
            coef[(1, 1)] -= 0.5 * d
            coef[(-1, -1)] -= 0.5 * d
            coef[(1, -1)] += 0.5 * d
            coef[(-1, 1)] += 0.5 * d
        else:
            coef[(1, -1)] += d
            coef[(-1, 1)] += d

    neighbors = {offset: c for offset, c in coef.items() if c != 0.0}
    diag = params.delta + sum(neighbors.values())
    source = float(running_cost_arrays(s, i, regime.p, params))
    return Stencil(diag=diag, neighbors=neighbors, source=source)


def assemble_system(grid: Grid, params: ModelParams, cross_scheme: str = "monotone"):
    """Stencils of every node and regime as dense arrays.

    Returns:
        (diag, coef, source) with shapes (4, n+1, n+1), (4, n+1, n+1, 8)
        and (4, n+1, n+1); entries outside D are zero.
    """
    size = grid.n + 1
    diag = np.ones((4, size, size))
    coef = np.zeros((4, size, size, len(OFFSETS)))
    source = np.zeros((4, size, size))
    for regime in ALL_REGIMES:
        for j, k in grid.nodes():
            stencil = build_stencil(grid, (j, k), regime, params, cross_scheme)
            diag[regime.index, j, k] = stencil.diag
            source[regime.index, j, k] = stencil.source
            for offset, c in stencil.neighbors.items():
                coef[regime.index, j, k, OFFSET_INDEX[offset]] = c
    return diag, coef, source


# =============================================================================
# Value field
# =============================================================================

@dataclass(frozen=True)
class PsorOptions:
    tol: float = PSOR_TOL
    max_sweeps: int = PSOR_MAX_SWEEPS
    omega: float = PSOR_OMEGA
    coupling_lambda: Optional[float] = None
    cross_scheme: str = "monotone"
    warm_start: Optional["ValueField"] = None
    verbose: bool = False
    report_every: int = 1000

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}", key="tol")
        if self.max_sweeps < 1:
            raise ConfigError(f"max_sweeps must be >= 1, got {self.max_sweeps}", key="max_sweeps")
        if not 0 < self.omega <= PSOR_MAX_OMEGA:
            raise ConfigError(
                f"relaxation omega must lie in (0, {PSOR_MAX_OMEGA}], got {self.omega}",
                key="omega",
            )
        if self.coupling_lambda is not None and self.coupling_lambda < 0:
            raise ConfigError("coupling_lambda must be >= 0", key="coupling_lambda")
        if self.cross_scheme not in CROSS_SCHEMES:
            raise ConfigError(f"unknown cross scheme {self.cross_scheme!r}", key="cross_scheme")


@dataclass
class ValueField:
    """Per-regime node values, shape (4, n+1, n+1) in REGIME_ORDER."""

    grid: Grid
    values: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    def regime(self, regime: Regime) -> np.ndarray:
        return self.values[regime.index]

    def at_node(self, regime: Regime, j: int, k: int) -> float:
        return float(self.values[regime.index, j, k])


@dataclass
class ResidualReport:
    """Per-node residuals, shape (4, n+1, n+1), plus aggregates.

    pde: c_I i + f + L v - delta*v   (>= 0 at a solution, 0 off the obstacle)
    gap: v(a,1-p) + g - v(a,p)       (>= 0 at a solution)
    combined: min(pde, gap)          (= 0 at a solution)
    """

    pde: np.ndarray
    gap: np.ndarray
    product: np.ndarray
    combined: np.ndarray
    mask: np.ndarray

    def _nodes(self, arr: np.ndarray) -> np.ndarray:
        return arr[:, self.mask]

    @property
    def max_pde(self) -> float:
        return float(np.max(np.abs(self._nodes(self.pde))))

    @property
    def l2_pde(self) -> float:
        return float(np.sqrt(np.mean(self._nodes(self.pde) ** 2)))

    @property
    def max_obstacle_violation(self) -> float:
        """Largest amount by which v exceeds its obstacle (0 if feasible)."""
        return float(max(0.0, -np.min(self._nodes(self.gap))))

    @property
    def max_complementarity(self) -> float:
        return float(np.max(np.abs(self._nodes(self.combined))))

    @property
    def l2_complementarity(self) -> float:
        return float(np.sqrt(np.mean(self._nodes(self.combined) ** 2)))

    @property
    def max_product(self) -> float:
        finite = self._nodes(self.product)
        finite = finite[np.isfinite(finite)]
        return float(np.max(np.abs(finite))) if finite.size else 0.0

    def summary(self) -> dict:
        return {
            "max_pde_residual": self.max_pde,
            "l2_pde_residual": self.l2_pde,
            "max_obstacle_violation": self.max_obstacle_violation,
            "max_complementarity": self.max_complementarity,
            "l2_complementarity": self.l2_complementarity,
            "max_complementarity_product": self.max_product,
        }


# =============================================================================
# Residuals
# =============================================================================

def _switch_cost_field(costs: SwitchCosts, v: np.ndarray, regime: Regime) -> np.ndarray:
    spec = costs.spec_for(regime.p)
    if spec.kind == "constant":
        return np.full(v.shape[1:], spec.value)
    return spec.value * v[spec.reference(regime).index]


def _apply_operator(v: np.ndarray, diag: np.ndarray, coef: np.ndarray, lam: float) -> np.ndarray:
    """(delta + lam - L)v on every node via shifted copies of v."""
    size = v.shape[1]
    padded = np.zeros((4, size + 2, size + 2))
    padded[:, 1:size + 1, 1:size + 1] = v
    out = (diag + lam) * v
    for m, (dj, dk) in enumerate(OFFSETS):
        out -= coef[..., m] * padded[:, 1 + dj:size + 1 + dj, 1 + dk:size + 1 + dk]
    return out


def _residuals(v, diag, coef, source, costs, lam, mask):
    pde = source + lam * v[FLIP_A] - _apply_operator(v, diag, coef, lam)
    if costs is None:
        gap = np.full(v.shape, np.inf)
    else:
        g = np.stack([_switch_cost_field(costs, v, regime) for regime in ALL_REGIMES])
        gap = v[FLIP_P] + g - v
    pde = np.where(mask, pde, 0.0)
    gap = np.where(mask, gap, 0.0)
    return pde, gap


def residual_report(field: ValueField, grid: Grid, params: ModelParams,
                    costs: Optional[SwitchCosts],
                    coupling_lambda: Optional[float] = None,
                    cross_scheme: Optional[str] = None) -> ResidualReport:
    """Residuals of ``field`` for the discrete system on ``grid``.

    ``coupling_lambda`` and ``cross_scheme`` default to the values the
    field was solved with. ``costs=None`` reports the unconstrained PDE
    (infinite obstacle gap).
    """
    meta = field.metadata
    if coupling_lambda is None:
        coupling_lambda = meta.get("coupling_lambda") or 0.0
    if cross_scheme is None:
        cross_scheme = meta.get("cross_scheme", "monotone")

    diag, coef, source = assemble_system(grid, params, cross_scheme)
    mask = grid.mask()
    pde, gap = _residuals(field.values, diag, coef, source, costs, coupling_lambda, mask)
    combined = np.minimum(pde, gap)
    with np.errstate(invalid="ignore"):
        product = np.where(np.isfinite(gap), pde * gap, 0.0)
    return ResidualReport(pde=pde, gap=gap, product=product, combined=combined, mask=mask)


# =============================================================================
# Projected SOR
# =============================================================================

@jit(nopython=True)
def _psor_sweep(v, r, flip, r_attack, diag, coef, offsets, source, gcost,
                omega, use_obstacle, lam):
    """One lexicographic projected SOR sweep of regime r; returns max change."""
    n = v.shape[1] - 1
    change = 0.0
    for j in range(n + 1):
        for k in range(n + 1 - j):
            acc = source[r, j, k]
            if lam > 0.0:
                acc += lam * v[r_attack, j, k]
            for m in range(offsets.shape[0]):
                c = coef[r, j, k, m]
                if c != 0.0:
                    acc += c * v[r, j + offsets[m, 0], k + offsets[m, 1]]
            old = v[r, j, k]
            new = old + omega * (acc / (diag[r, j, k] + lam) - old)
            if use_obstacle:
                bound = v[flip, j, k] + gcost[j, k]
                if new > bound:
                    new = bound
            delta = abs(new - old)
            if delta > change:
                change = delta
            v[r, j, k] = new
    return change


class _DivergedError(ConvergenceError):
    """Residual blew up; a smaller omega may still converge."""


def _initial_guess(grid: Grid, params: ModelParams, options: PsorOptions) -> np.ndarray:
    mask = grid.mask()
    if options.warm_start is None:
        return np.where(mask, never_switch_bound(params), 0.0)[None].repeat(4, axis=0)
    if options.warm_start.grid.n != grid.n:
        raise ConfigError(
            f"warm start field has n={options.warm_start.grid.n}, grid has n={grid.n}",
            key="warm_start",
        )
    return np.where(mask, options.warm_start.values, 0.0).astype(float)


def _iterate(v, system, costs, options: PsorOptions, omega: float, use_obstacle: bool, mask):
    """Sweep until the complementarity residual reaches tol; updates v in place."""
    diag, coef, source = system
    lam = float(options.coupling_lambda or 0.0)
    zeros = np.zeros(v.shape[1:])
    history: list[float] = []
    changes: list[float] = []

    for sweep in range(1, options.max_sweeps + 1):
        change = 0.0
        for regime in ALL_REGIMES:
            gcost = _switch_cost_field(costs, v, regime) if use_obstacle else zeros
            change = max(change, _psor_sweep(
                v, regime.index, regime.index ^ 1, regime.index ^ 2, diag, coef, OFFSETS,
                source, np.ascontiguousarray(gcost), omega, use_obstacle, lam,
            ))
        changes.append(change)

        pde, gap = _residuals(v, diag, coef, source, costs if use_obstacle else None, lam, mask)
        residual = float(np.max(np.abs(np.minimum(pde, gap)[:, mask])))
        history.append(residual)

        if not np.isfinite(residual) or residual > DIVERGENCE_FACTOR * max(history[0], options.tol):
            raise _DivergedError(
                f"PSOR diverged at sweep {sweep} (residual {residual:.3e}, omega {omega:g})",
                history,
            )
        if options.verbose and sweep % options.report_every == 0:
            print_info(f"sweep {sweep}: residual {residual:.3e}, change {change:.3e}")
        if residual <= options.tol:
            return history, changes

    raise ConvergenceError(
        f"PSOR did not reach tol {options.tol:g} in {options.max_sweeps} sweeps "
        f"(residual {history[-1]:.3e})",
        history,
    )


def _solve(grid: Grid, params: ModelParams, costs: Optional[SwitchCosts],
           options: PsorOptions, use_obstacle: bool) -> ValueField:
    system = assemble_system(grid, params, options.cross_scheme)
    mask = grid.mask()
    start = time.perf_counter()

    omega = options.omega
    v = _initial_guess(grid, params, options)
    try:
        history, changes = _iterate(v, system, costs, options, omega, use_obstacle, mask)
    except ConvergenceError as e:
        if omega <= 1.0:
            raise
        print_warning(f"{e}; restarting with omega = 1")
        omega = 1.0
        v = _initial_guess(grid, params, options)
        history, changes = _iterate(v, system, costs, options, omega, use_obstacle, mask)

    wall_time = time.perf_counter() - start
    if options.verbose:
        print_info(f"converged after {len(history)} sweeps, residual {history[-1]:.3e}, "
                   f"{wall_time:.2f}s")

    return ValueField(
        grid=grid,
        values=v,
        metadata={
            "params_hash": params_hash(params, costs),
            "solver": "grid",
            "n": grid.n,
            "tol": options.tol,
            "omega": omega,
            "omega_requested": options.omega,
            "cross_scheme": options.cross_scheme,
            "coupling_lambda": options.coupling_lambda,
            "obstacle": use_obstacle,
            "sweeps": len(history),
            "residual": history[-1],
            "last_change": changes[-1],
            "residual_history": history,
            "wall_time": wall_time,
        },
    )


def solve_psor(grid: Grid, params: ModelParams, costs: SwitchCosts,
               options: Optional[PsorOptions] = None) -> ValueField:
    """Solve the coupled switching system.

    Raises:
        ConvergenceError: Divergence or no convergence within max_sweeps
        ConfigError: Invalid options
    """
    return _solve(grid, params, costs, options or PsorOptions(), use_obstacle=True)


def decoupled_solve(grid: Grid, params: ModelParams,
                    options: Optional[PsorOptions] = None) -> ValueField:
    """Four independent linear PDE solves (no switching obstacle)."""
    field = _solve(grid, params, None, options or PsorOptions(), use_obstacle=False)
    field.metadata["params_hash"] = params_hash(params)
    return field


def lipschitz_estimate(field: ValueField, grid: Grid) -> dict:
    """Largest |dv| / (|ds| + |di|) over axis-aligned grid edges, per regime."""
    mask = grid.mask()
    h = grid.spacing
    out = {}
    for regime in ALL_REGIMES:
        v = field.values[regime.index]
        ds = np.abs(np.diff(v, axis=0))[(mask[1:, :] & mask[:-1, :])]
        di = np.abs(np.diff(v, axis=1))[(mask[:, 1:] & mask[:, :-1])]
        slope = max(ds.max(initial=0.0), di.max(initial=0.0)) / h
        out[regime] = float(slope)
    return out
