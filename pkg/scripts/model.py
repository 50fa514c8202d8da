"""Cyber-epidemic SIRS control model.

Houses the model parameters, protection/attack regimes, states on the
simplex, switching-cost specifications and the formulas every solver
shares: drift, diffusion magnitude, running cost, the controlled
generator and the s = 0 boundary datum.

The ``*_arrays`` helpers only use arithmetic operators, so the grid
solver (numpy), the simulator (numpy) and the network loss (torch) all
evaluate one implementation of each formula.

Usage:
    from model import ModelParams, Regime, State, drift

    params = ModelParams(beta=0.04, gamma=0.02, rho=0.002, nu=0.05,
                         kappa=0.03, sigma=0.2, delta=0.2,
                         c_I=0.01, c_V=0.05)
    ds_dt, di_dt = drift(State(1.0, 0.0), Regime(1, 0), params)
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Literal, Mapping, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from switching_constants import REGIME_ORDER

__all__ = [
    "SwitchingError",
    "ConfigError",
    "ConvergenceError",
    "TrainingDivergedError",
    "PolicyError",
    "ParamsMismatchError",
    "ModelParams",
    "Regime",
    "ALL_REGIMES",
    "State",
    "SwitchCostSpec",
    "SwitchCosts",
    "Derivs",
    "drift",
    "drift_arrays",
    "diffusion",
    "diffusion_arrays",
    "running_cost",
    "running_cost_arrays",
    "generator_apply",
    "generator_terms",
    "boundary_value",
    "switch_cost",
    "switch_cost_arrays",
    "never_switch_bound",
    "sir_mode",
    "render_params",
    "params_hash",
]

STATE_TOL = 1e-12


# =============================================================================
# Errors
# =============================================================================

class SwitchingError(Exception):
    """Base class for toolkit failures."""


class ConfigError(SwitchingError):
    """Invalid configuration or usage.

    Attributes:
        line: 1-based config line number, when the error comes from a file
        key: Offending config key, when known
    """

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ParamsMismatchError(ConfigError):
    """A value source was built for different model parameters."""


class ConvergenceError(SwitchingError):
    """Grid solver did not converge; carries the residual history."""

    def __init__(self, message: str, history):
        self.history = list(history)
        super().__init__(message)


class TrainingDivergedError(SwitchingError):
    """Network training produced a non-finite loss; carries the loss trace."""

    def __init__(self, message: str, trace):
        self.trace = list(trace)
        super().__init__(message)


class PolicyError(SwitchingError):
    """A protection policy callback failed during simulation."""

    def __init__(self, message: str, step: int, time: float):
        self.step = step
        self.time = time
        super().__init__(f"step {step} (t={time:g}): {message}")


# =============================================================================
# Domain Types
# =============================================================================

class ModelParams(BaseModel):
    """Epidemic, control and cost rates of the protection problem."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    beta: float = Field(..., ge=0, description="Contagion rate (1/day)")
    gamma: float = Field(..., ge=0, description="Recovery rate (1/day)")
    rho: float = Field(..., ge=0, description="Obsolescence rate R -> S (1/day)")
    nu: float = Field(..., ge=0, description="Attack intensity (1/day)")
    kappa: float = Field(..., ge=0, description="Protection intensity (1/day)")
    sigma: float = Field(..., ge=0, description="Transmission volatility")
    delta: float = Field(..., gt=0, description="Discount rate (1/day)")
    c_I: float = Field(..., ge=0, description="Infection cost per unit I per day")
    c_V: float = Field(..., ge=0, description="Protection cost per unit flow per day")

    def with_changes(self, **changes) -> "ModelParams":
        """Return a validated copy with some fields replaced."""
        return ModelParams(**{**self.model_dump(), **changes})


@dataclass(frozen=True)
class Regime:
    """Attack level ``a`` and protection level ``p``, both binary."""

    a: int
    p: int

    def __post_init__(self):
        if self.a not in (0, 1) or self.p not in (0, 1):
            raise ValueError(f"Regime levels must be 0 or 1, got a={self.a}, p={self.p}")
        object.__setattr__(self, "a", int(self.a))
        object.__setattr__(self, "p", int(self.p))

    @property
    def index(self) -> int:
        """Position in REGIME_ORDER and in every (4, ...) value array."""
        return 2 * self.a + self.p

    def flip_p(self) -> "Regime":
        return Regime(self.a, 1 - self.p)

    def flip_a(self) -> "Regime":
        return Regime(1 - self.a, self.p)

    @classmethod
    def from_index(cls, index: int) -> "Regime":
        return cls(*REGIME_ORDER[index])


ALL_REGIMES = tuple(Regime(a, p) for a, p in REGIME_ORDER)


@dataclass(frozen=True)
class State:
    """Point of the simplex D = {s, i >= 0, s + i <= 1}; r is derived."""

    s: float
    i: float

    def __post_init__(self):
        s, i = float(self.s), float(self.i)
        if not (math.isfinite(s) and math.isfinite(i)):
            raise ValueError(f"State must be finite, got ({s}, {i})")
        if s < -STATE_TOL or i < -STATE_TOL or s + i > 1.0 + STATE_TOL:
            raise ValueError(f"State ({s}, {i}) is outside the simplex")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "i", i)

    @property
    def r(self) -> float:
        return 1.0 - self.s - self.i


class SwitchCostSpec(BaseModel):
    """Cost of one protection switch p -> 1-p.

    ``constant``: the cost is ``value`` (> 0).
    ``proportional``: the cost is ``value`` times the value function of a
    reference regime at the current state. ``ref_a``/``ref_p`` pin the
    reference levels; None means the level of the regime being left.
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    kind: Literal["constant", "proportional"] = "constant"
    value: float = Field(..., ge=0)
    ref_a: Optional[int] = Field(None, ge=0, le=1)
    ref_p: Optional[int] = Field(None, ge=0, le=1)

    @model_validator(mode="after")
    def _check_value(self) -> "SwitchCostSpec":
        if self.kind == "constant" and self.value <= 0:
            raise ValueError("constant switching cost must be strictly positive")
        if self.kind == "proportional" and self.value >= 1:
            raise ValueError("proportional switching factor must lie in [0, 1)")
        return self

    @classmethod
    def constant(cls, g: float) -> "SwitchCostSpec":
        return cls(kind="constant", value=g)

    @classmethod
    def proportional(cls, factor: float, ref_p: Optional[int] = None,
                     ref_a: Optional[int] = None) -> "SwitchCostSpec":
        return cls(kind="proportional", value=factor, ref_p=ref_p, ref_a=ref_a)

    def reference(self, regime: Regime) -> Regime:
        """Regime whose value a proportional cost scales when leaving ``regime``."""
        a = regime.a if self.ref_a is None else self.ref_a
        p = regime.p if self.ref_p is None else self.ref_p
        return Regime(a, p)


class SwitchCosts(BaseModel):
    """The two switching-cost specs, for 0 -> 1 and 1 -> 0."""

    model_config = ConfigDict(frozen=True)

    g01: SwitchCostSpec
    g10: SwitchCostSpec

    def spec_for(self, p_from: int) -> SwitchCostSpec:
        return self.g01 if p_from == 0 else self.g10

    def max_constant(self) -> float:
        """Largest constant cost (0 when both are proportional)."""
        return max(
            (spec.value for spec in (self.g01, self.g10) if spec.kind == "constant"),
            default=0.0,
        )

    @classmethod
    def constant(cls, g01: float, g10: Optional[float] = None) -> "SwitchCosts":
        return cls(
            g01=SwitchCostSpec.constant(g01),
            g10=SwitchCostSpec.constant(g01 if g10 is None else g10),
        )


class Derivs(NamedTuple):
    """Value and first/second partials of a function of (s, i)."""

    v: object
    v_s: object
    v_i: object
    v_ss: object
    v_ii: object
    v_si: object


# =============================================================================
# Model formulas
# =============================================================================

def drift_arrays(s, i, a, p, params: ModelParams, r=None):
    """Drift (ds/dt, di/dt); ``r`` overrides 1 - s - i when known exactly."""
    if r is None:
        r = 1.0 - s - i
    ds = params.rho * r - s * (p * params.kappa + a * params.nu + params.beta * i)
    di = a * params.nu * s - params.gamma * i + params.beta * s * i
    return ds, di


def drift(state: State, regime: Regime, params: ModelParams) -> tuple[float, float]:
    ds, di = drift_arrays(state.s, state.i, regime.a, regime.p, params)
    return float(ds), float(di)


def diffusion_arrays(s, i, params: ModelParams):
    return params.sigma * s * i


def diffusion(state: State, params: ModelParams) -> float:
    """Noise magnitude sigma*s*i; it enters dS with - and dI with + sign."""
    return float(diffusion_arrays(state.s, state.i, params))


def running_cost_arrays(s, i, p, params: ModelParams):
    return params.c_I * i + params.c_V * params.kappa * s * p


def running_cost(state: State, regime: Regime, params: ModelParams) -> float:
    return float(running_cost_arrays(state.s, state.i, regime.p, params))


def generator_terms(v_s, v_i, v_ss, v_ii, v_si, s, i, a, p, params: ModelParams):
    """L^{a,p} applied to precomputed partials (v itself does not enter)."""
    ds, di = drift_arrays(s, i, a, p, params)
    diff = 0.5 * params.sigma ** 2 * s ** 2 * i ** 2
    return ds * v_s + di * v_i + diff * (v_ss + v_ii - 2.0 * v_si)


def generator_apply(derivs: Derivs, state: State, regime: Regime, params: ModelParams) -> float:
    return float(generator_terms(
        derivs.v_s, derivs.v_i, derivs.v_ss, derivs.v_ii, derivs.v_si,
        state.s, state.i, regime.a, regime.p, params,
    ))


def boundary_value(i, params: ModelParams):
    """Value on the s = 0 edge: c_I * i / (delta + gamma).

    Exact for rho = 0 only; with rho > 0 the edge is not invariant.
    """
    return params.c_I * i / (params.delta + params.gamma)


def switch_cost(spec: SwitchCostSpec, values_at_state: Mapping[Regime, float],
                state: State, regime: Regime) -> float:
    """Cost of leaving ``regime`` at ``state``.

    Raises:
        ConfigError: Proportional spec whose reference value is missing
    """
    if spec.kind == "constant":
        return spec.value
    ref = spec.reference(regime)
    if ref not in values_at_state:
        raise ConfigError(
            f"proportional switching cost needs v(a={ref.a}, p={ref.p}) at "
            f"({state.s:g}, {state.i:g}), which was not provided"
        )
    return spec.value * float(values_at_state[ref])


def switch_cost_arrays(costs: SwitchCosts, values: Optional[np.ndarray],
                       a: np.ndarray, p_from: np.ndarray) -> np.ndarray:
    """Vectorized switching cost for a batch of points.

    Args:
        costs: Switching-cost pair
        values: Regime values at the points, shape (4, B) in REGIME_ORDER,
            or None when no value source is available
        a: Attack level per point
        p_from: Protection level being left, per point

    Returns:
        Cost per point, shape (B,)
    """
    a = np.asarray(a, dtype=np.int64)
    p_from = np.asarray(p_from, dtype=np.int64)
    out = np.empty(a.shape, dtype=float)
    for level in (0, 1):
        sel = p_from == level
        if not np.any(sel):
            continue
        spec = costs.spec_for(level)
        if spec.kind == "constant":
            out[sel] = spec.value
            continue
        if values is None:
            raise ConfigError("proportional switching costs need a value source")
        ref_a = a[sel] if spec.ref_a is None else np.full(int(sel.sum()), spec.ref_a)
        ref_p = level if spec.ref_p is None else spec.ref_p
        ref_index = 2 * ref_a + ref_p
        out[sel] = spec.value * values[ref_index, np.flatnonzero(sel)]
    return out


def never_switch_bound(params: ModelParams) -> float:
    """Upper bound (c_I + c_V*kappa)/delta on any never-switch value."""
    return (params.c_I + params.c_V * params.kappa) / params.delta


def sir_mode(params: ModelParams) -> bool:
    """True when rho = 0, the case where the s = 0 datum is exact."""
    return params.rho == 0.0


def render_params(params: ModelParams, costs: Optional[SwitchCosts] = None) -> str:
    """Canonical key=value rendering used for hashing and manifests."""
    lines = [f"{key}={value!r}" for key, value in params.model_dump().items()]
    if costs is not None:
        for name, spec in (("g01", costs.g01), ("g10", costs.g10)):
            lines.append(f"{name}={spec.value!r}")
            lines.append(f"{name}_mode={spec.kind}")
            lines.append(f"{name}_ref_a={spec.ref_a}")
            lines.append(f"{name}_ref_p={spec.ref_p}")
    return "\n".join(lines) + "\n"


def params_hash(params: ModelParams, costs: Optional[SwitchCosts] = None) -> str:
    """Short stable SHA-256 of the canonical parameter rendering."""
    return hashlib.sha256(render_params(params, costs).encode("utf-8")).hexdigest()[:16]
