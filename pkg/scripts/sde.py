"""Euler-Maruyama simulation of the controlled SIRS system.

One standard-normal draw per step, scaled by sqrt(h), enters dS with a
minus sign and dI with a plus sign. After each step the state is
projected back onto the simplex. The batch engine ``simulate_paths`` is
shared by the uncontrolled simulator, the optimal-switching simulator and
the Monte Carlo evaluator, so all three use the same step order and cost
accounting:

    1. apply the attack level of the schedule at t_k
    2. query the protection policy (switch cost charged at the pre-switch state)
    3. record (s, i, a, p) at t_k
    4. integrate to t_{k+1} with (a_k, p_k) held fixed
    5. add the trapezoid of e^{-delta t}(c_I I + f(S, p_k)) over [t_k, t_{k+1}]

Path j draws its noise from ``np.random.default_rng([seed, j])`` so any
path can be reproduced in isolation.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence, Union

import numpy as np

from attacks import AttackSchedule, attack_track, schedule_for_path
from model import (
    ConfigError,
    ModelParams,
    PolicyError,
    Regime,
    State,
    SwitchCosts,
    SwitchingError,
    diffusion_arrays,
    drift_arrays,
    running_cost_arrays,
    switch_cost_arrays,
)
from switching_constants import DEFAULT_HORIZON, DEFAULT_SEED, DEFAULT_STEP, MIN_DWELL_STEPS

__all__ = [
    "PathConfig",
    "SwitchEvent",
    "Trajectory",
    "PathBatch",
    "ProtectionPolicy",
    "HoldPolicy",
    "CallbackPolicy",
    "project_to_simplex",
    "project_arrays",
    "step_euler",
    "euler_arrays",
    "path_noise",
    "simulate_paths",
    "simulate",
]


# =============================================================================
# Types
# =============================================================================

@dataclass(frozen=True)
class PathConfig:
    """Time grid, seed and initial condition of a simulated path."""

    t0: float = 0.0
    horizon: float = DEFAULT_HORIZON
    step: float = DEFAULT_STEP
    seed: int = DEFAULT_SEED
    initial_state: State = State(1.0, 0.0)
    initial_regime: Regime = Regime(1, 0)

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError(f"step must be > 0, got {self.step}", key="step")
        if self.horizon <= self.t0:
            raise ConfigError(f"horizon {self.horizon} must exceed t0 {self.t0}", key="horizon")
        ratio = (self.horizon - self.t0) / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(
                f"(horizon - t0)/step = {ratio:g} is not an integer number of steps",
                key="step",
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.horizon - self.t0) / self.step))

    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.n_steps + 1)

    def replace(self, **changes) -> "PathConfig":
        return dataclasses.replace(self, **changes)


class SwitchEvent(NamedTuple):
    """One regime flip. ``track`` is "attack" or "protection"."""

    time: float
    track: str
    from_level: int
    to_level: int
    value_gap: float = float("nan")


@dataclass
class Trajectory:
    times: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    a: np.ndarray
    p: np.ndarray
    protection_switches: list[SwitchEvent] = field(default_factory=list)
    attack_switches: list[SwitchEvent] = field(default_factory=list)
    cost: float = 0.0

    @property
    def switch_log(self) -> list[SwitchEvent]:
        """All flips in time order; at equal times the attack flip comes first."""
        order = {"attack": 0, "protection": 1}
        return sorted(self.attack_switches + self.protection_switches,
                      key=lambda e: (e.time, order[e.track]))


@dataclass
class PathBatch:
    """Output of the batch engine.

    Per-step arrays (``s``, ``i``, ``a``, ``p``) have shape
    (n_paths, n_steps + 1) and are None when the batch was run with
    ``keep_paths=False``.
    """

    times: np.ndarray
    path_indices: np.ndarray
    costs: np.ndarray
    terminal_s: np.ndarray
    terminal_i: np.ndarray
    switch_logs: list[list[SwitchEvent]]
    s: Optional[np.ndarray] = None
    i: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    def protection_switch_counts(self) -> np.ndarray:
        return np.array([sum(1 for e in log if e.track == "protection")
                         for log in self.switch_logs], dtype=np.int64)

    def trajectory(self, k: int) -> Trajectory:
        if self.s is None:
            raise ValueError("batch was run without keep_paths; no per-step data")
        s, i = self.s[k], self.i[k]
        log = self.switch_logs[k]
        return Trajectory(
            times=self.times,
            s=s,
            i=i,
            r=1.0 - s - i,
            a=self.a[k],
            p=self.p[k],
            protection_switches=[e for e in log if e.track == "protection"],
            attack_switches=[e for e in log if e.track == "attack"],
            cost=float(self.costs[k]),
        )


class ProtectionPolicy(Protocol):
    """Vectorized protection controller.

    ``decide`` returns the desired protection level per path, given the
    time, the current states, attack levels and protection levels.
    """

    def decide(self, t: float, s: np.ndarray, i: np.ndarray,
               a: np.ndarray, p: np.ndarray) -> np.ndarray:
        ...


class HoldPolicy:
    """Never changes the protection level (uncontrolled dynamics)."""

    name = "hold"

    def decide(self, t, s, i, a, p):
        return p.copy()


class CallbackPolicy:
    """Adapts a scalar callback ``fn(t, State, Regime) -> p`` to the batch protocol."""

    def __init__(self, fn: Callable[[float, State, Regime], int], name: str = "callback"):
        self.fn = fn
        self.name = name

    def decide(self, t, s, i, a, p):
        out = np.empty(len(s), dtype=np.int8)
        for b in range(len(s)):
            state = State(float(s[b]), float(i[b]))
            out[b] = int(self.fn(t, state, Regime(int(a[b]), int(p[b]))))
        return out


PolicyLike = Union[ProtectionPolicy, Callable[[float, State, Regime], int]]


def _as_policy(policy: Optional[PolicyLike]) -> ProtectionPolicy:
    if policy is None:
        return HoldPolicy()
    if hasattr(policy, "decide"):
        return policy
    if callable(policy):
        return CallbackPolicy(policy)
    raise TypeError(f"not a protection policy: {policy!r}")


# =============================================================================
# Single-step numerics
# =============================================================================

def project_arrays(s, i):
    """Clamp to [0, 1] and rescale onto s + i <= 1 (arrays or scalars)."""
    s = np.clip(s, 0.0, 1.0)
    i = np.clip(i, 0.0, 1.0)
    total = s + i
    scale = np.where(total > 1.0, total, 1.0)
    return s / scale, i / scale


def project_to_simplex(raw: tuple[float, float]) -> State:
    s, i = project_arrays(np.float64(raw[0]), np.float64(raw[1]))
    return State(float(s), float(i))


def euler_arrays(s, i, a, p, params: ModelParams, h: float, dW):
    """One projected Euler-Maruyama step; ``dW`` is the scaled increment."""
    ds, di = drift_arrays(s, i, a, p, params)
    noise = diffusion_arrays(s, i, params) * dW
    return project_arrays(s + ds * h - noise, i + di * h + noise)


def step_euler(state: State, regime: Regime, params: ModelParams, h: float, dW: float) -> State:
    if h <= 0:
        raise ValueError(f"step must be > 0, got {h}")
    s, i = euler_arrays(np.float64(state.s), np.float64(state.i), regime.a, regime.p,
                        params, h, np.float64(dW))
    return State(float(s), float(i))


def _pair_base(path_index: int, n_paths: int, antithetic: bool) -> tuple[int, float]:
    """Stream index and sign for a path; antithetic pairs share a stream."""
    if not antithetic or n_paths < 2:
        return path_index, 1.0
    half = n_paths // 2
    if half <= path_index < 2 * half:
        return path_index - half, -1.0
    return path_index, 1.0


def path_noise(seed: int, path_index: int, n_steps: int,
               n_paths: int = 1, antithetic: bool = False) -> np.ndarray:
    """Standard-normal draws (unscaled) for one path."""
    base, sign = _pair_base(path_index, n_paths, antithetic)
    return sign * np.random.default_rng([int(seed), int(base)]).standard_normal(n_steps)


# =============================================================================
# Batch engine
# =============================================================================

def simulate_paths(
    params: ModelParams,
    schedule: AttackSchedule,
    policy: Optional[PolicyLike],
    config: PathConfig,
    n_paths: int = 1,
    path_indices: Optional[Sequence[int]] = None,
    costs: Optional[SwitchCosts] = None,
    value_source=None,
    antithetic: bool = False,
    keep_paths: bool = True,
    min_dwell_steps: int = MIN_DWELL_STEPS,
) -> PathBatch:
    """Simulate a batch of controlled paths.

    Args:
        params: Model parameters
        schedule: Attack schedule (Poisson schedules are redrawn per path)
        policy: Protection policy, scalar callback, or None to hold p fixed
        config: Time grid, master seed and initial condition
        n_paths: Total batch size (fixes antithetic pairing)
        path_indices: Subset of path ids to run (default: all n_paths)
        costs: Switching costs, required once the policy switches
        value_source: Value lookup for proportional costs and value gaps
        antithetic: Negate the noise of the second half of the batch
        keep_paths: Store per-step arrays (False keeps terminal values only)
        min_dwell_steps: Steps after an owner switch during which p is frozen

    Returns:
        PathBatch

    Raises:
        PolicyError: The policy raised or returned an invalid level
        ConfigError: A switch happened without the costs needed to charge it,
            or the schedule starts at another attack level than the config
    """
    if schedule.a0 != config.initial_regime.a:
        raise ConfigError(
            f"attack schedule starts at a={schedule.a0} but the initial regime has "
            f"a={config.initial_regime.a}",
            key="a0",
        )
    policy = _as_policy(policy)
    if path_indices is None:
        path_indices = np.arange(n_paths)
    path_indices = np.asarray(path_indices, dtype=np.int64)

    times = config.times()
    n = config.n_steps
    h = config.step
    sqrt_h = np.sqrt(h)
    discount = np.exp(-params.delta * (times - config.t0))
    batch = len(path_indices)

    noise = np.empty((batch, n))
    tracks = np.empty((batch, n + 1), dtype=np.int8)
    for row, j in enumerate(path_indices):
        noise[row] = path_noise(config.seed, j, n, n_paths, antithetic)
        base, _ = _pair_base(int(j), n_paths, antithetic)
        path_schedule = schedule_for_path(schedule, config.seed, base, config.horizon, min_gap=h)
        tracks[row] = attack_track(path_schedule, times)

    s = np.full(batch, config.initial_state.s)
    i = np.full(batch, config.initial_state.i)
    p = np.full(batch, config.initial_regime.p, dtype=np.int8)
    last_switch = np.full(batch, -(min_dwell_steps + 1), dtype=np.int64)
    cost = np.zeros(batch)
    logs: list[list[SwitchEvent]] = [[] for _ in range(batch)]

    if keep_paths:
        rec_s = np.empty((batch, n + 1))
        rec_i = np.empty((batch, n + 1))
        rec_a = np.empty((batch, n + 1), dtype=np.int8)
        rec_p = np.empty((batch, n + 1), dtype=np.int8)

    a_prev = None
    for k in range(n + 1):
        t = float(times[k])
        a = tracks[:, k]
        if a_prev is not None:
            for b in np.flatnonzero(a != a_prev):
                logs[b].append(SwitchEvent(t, "attack", int(a_prev[b]), int(a[b])))
        a_prev = a

        if k < n:
            p = _owner_decisions(policy, k, t, s, i, a, p, last_switch, min_dwell_steps,
                                 cost, discount[k], costs, value_source, logs)

        if keep_paths:
            rec_s[:, k] = s
            rec_i[:, k] = i
            rec_a[:, k] = a
            rec_p[:, k] = p
        if k == n:
            break

        f0 = running_cost_arrays(s, i, p, params)
        s, i = euler_arrays(s, i, a, p, params, h, noise[:, k] * sqrt_h)
        f1 = running_cost_arrays(s, i, p, params)
        cost += 0.5 * h * (discount[k] * f0 + discount[k + 1] * f1)

    return PathBatch(
        times=times,
        path_indices=path_indices,
        costs=cost,
        terminal_s=s.copy(),
        terminal_i=i.copy(),
        switch_logs=logs,
        s=rec_s if keep_paths else None,
        i=rec_i if keep_paths else None,
        a=rec_a if keep_paths else None,
        p=rec_p if keep_paths else None,
    )


def _owner_decisions(policy, k, t, s, i, a, p, last_switch, min_dwell_steps,
                     cost, discount, costs, value_source, logs) -> np.ndarray:
    """Apply one round of owner decisions in place of ``p``; returns new p."""
    try:
        wanted = np.asarray(policy.decide(t, s, i, a, p))
    except SwitchingError:
        raise
    except Exception as e:
        raise PolicyError(f"{type(e).__name__}: {e}", k, t) from e
    if wanted.shape != p.shape or not np.all((wanted == 0) | (wanted == 1)):
        raise PolicyError("policy must return one 0/1 level per path", k, t)

    switching = (wanted != p) & (k - last_switch > min_dwell_steps)
    if not np.any(switching):
        return p

    if costs is None:
        raise ConfigError("switching costs are required for a policy that switches")
    idx = np.flatnonzero(switching)
    values = value_source.regime_values(s[idx], i[idx]) if value_source is not None else None
    g = switch_cost_arrays(costs, values, a[idx], p[idx])
    cost[idx] += discount * g

    if values is not None:
        col = np.arange(len(idx))
        stay = values[2 * a[idx] + p[idx], col]
        move = values[2 * a[idx] + (1 - p[idx]), col]
        gaps = stay - move - g
    else:
        gaps = np.full(len(idx), np.nan)

    new_p = p.copy()
    for n_row, b in enumerate(idx):
        logs[b].append(SwitchEvent(t, "protection", int(p[b]), int(1 - p[b]), float(gaps[n_row])))
        new_p[b] = 1 - p[b]
        last_switch[b] = k
    return new_p


def simulate(
    params: ModelParams,
    schedule: AttackSchedule,
    policy: Optional[PolicyLike],
    config: PathConfig,
    costs: Optional[SwitchCosts] = None,
    value_source=None,
) -> Trajectory:
    """Simulate path 0 of ``config.seed``; see ``simulate_paths``."""
    batch = simulate_paths(params, schedule, policy, config, n_paths=1,
                           costs=costs, value_source=value_source)
    return batch.trajectory(0)
