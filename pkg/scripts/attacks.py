"""Hacker attack schedules.

The attack level a_t is exogenous and piecewise constant: it starts at
``a0`` and flips at each switch time. Schedules are materialized over a
finite horizon so compared policies replay identical attacks.

Usage:
    from attacks import poisson_attack, attack_level_at

    schedule = poisson_attack(0.1, a0=1, horizon=30.0, seed=7)
    level = attack_level_at(schedule, 12.5)
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np

from model import ConfigError

__all__ = [
    "AttackSchedule",
    "constant_attack",
    "poisson_attack",
    "explicit_attack",
    "load_explicit_schedule",
    "attack_level_at",
    "attack_track",
    "schedule_for_path",
]

# Third seed word separating attack substreams from path-noise substreams
ATTACK_STREAM = 1

SeedLike = Union[int, Sequence[int]]


@dataclass(frozen=True)
class AttackSchedule:
    """Attack process: initial level plus strictly increasing flip times."""

    a0: int
    switch_times: tuple[float, ...] = ()
    provenance: Literal["constant", "poisson", "explicit"] = "constant"
    rate: Optional[float] = None
    seed: Optional[SeedLike] = None
    horizon: Optional[float] = None

    def __post_init__(self):
        if self.a0 not in (0, 1):
            raise ValueError(f"a0 must be 0 or 1, got {self.a0}")
        times = tuple(float(t) for t in self.switch_times)
        if any(t < 0 for t in times):
            raise ValueError("attack switch times must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("attack switch times must be strictly increasing")
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "a0", int(self.a0))


def constant_attack(a0: int) -> AttackSchedule:
    return AttackSchedule(a0=a0, provenance="constant")


def poisson_attack(lam: float, a0: int, horizon: float, seed: SeedLike,
                   min_gap: float = 0.0) -> AttackSchedule:
    """Flip times of a homogeneous Poisson process on [0, horizon].

    Events come from cumulative exponential(lam) gaps drawn from
    ``np.random.default_rng(seed)``. An event closer than ``min_gap`` to
    the previously kept event is dropped.
    """
    if lam < 0:
        raise ValueError(f"attack rate must be >= 0, got {lam}")
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")

    times: list[float] = []
    if lam > 0:
        rng = np.random.default_rng(seed)
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t > horizon:
                break
            if times and t - times[-1] < min_gap:
                continue
            times.append(t)

    return AttackSchedule(
        a0=a0,
        switch_times=tuple(times),
        provenance="poisson",
        rate=lam,
        seed=seed,
        horizon=horizon,
    )


def explicit_attack(a0: int, switch_times: Sequence[float]) -> AttackSchedule:
    return AttackSchedule(a0=a0, switch_times=tuple(switch_times), provenance="explicit")


def load_explicit_schedule(path: Path, a0: int) -> AttackSchedule:
    """Load switch times from a CSV with a ``time`` column.

    Raises:
        ConfigError: Missing file, missing column or unparsable row
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"attack schedule file not found: {path}", key="attack_file")

    times = []
    with open(path, newline="") as f:
        reader = csv.DictReader(line for line in f if not line.startswith("#"))
        if reader.fieldnames is None or "time" not in reader.fieldnames:
            raise ConfigError(f"{path}: expected a 'time' column", key="attack_file")
        for row_num, row in enumerate(reader, start=2):
            try:
                times.append(float(row["time"]))
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: bad time value {row['time']!r}",
                                  line=row_num, key="attack_file")
    try:
        return explicit_attack(a0, times)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}", key="attack_file")


def attack_level_at(schedule: AttackSchedule, t: float) -> int:
    """Level at time t (right-continuous: a flip at t already applies)."""
    flips = int(np.searchsorted(schedule.switch_times, t, side="right"))
    return schedule.a0 ^ (flips % 2)


def attack_track(schedule: AttackSchedule, times: np.ndarray) -> np.ndarray:
    """Vectorized attack_level_at over an array of times."""
    flips = np.searchsorted(np.asarray(schedule.switch_times, dtype=float),
                            np.asarray(times, dtype=float), side="right")
    return (schedule.a0 ^ (flips % 2)).astype(np.int8)


def schedule_for_path(schedule: AttackSchedule, seed: int, path_index: int,
                      horizon: float, min_gap: float = 0.0) -> AttackSchedule:
    """Schedule replayed by path ``path_index`` of a batch.

    Poisson schedules are redrawn per path from the substream
    (seed, path_index, ATTACK_STREAM); constant and explicit schedules are
    shared by every path.
    """
    if schedule.provenance != "poisson":
        return schedule
    return poisson_attack(
        schedule.rate, schedule.a0, horizon,
        seed=[int(seed), int(path_index), ATTACK_STREAM],
        min_gap=min_gap,
    )
