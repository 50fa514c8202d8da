"""Uniform value lookup over grid fields and trained networks."""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
import torch

from model import ALL_REGIMES, ParamsMismatchError, Regime, State
from vi_grid import Grid, ValueField

__all__ = [
    "ValueSource",
    "GridValueSource",
    "NetworkValueSource",
    "check_params_hash",
]


class ValueSource(ABC):
    """Value function v(s, i; a, p) for all four regimes, total on D.

    Backends may be a solved grid field or a set of trained networks;
    policies and simulators only use this interface.
    """

    params_hash: Optional[str] = None

    @abstractmethod
    def value(self, s, i, a: int, p: int) -> np.ndarray:
        """Values of regime (a, p) at points (s, i); returns an array."""
        pass

    def regime_values(self, s, i) -> np.ndarray:
        """Values of every regime, shape (4, B) in REGIME_ORDER."""
        return np.stack([self.value(s, i, r.a, r.p) for r in ALL_REGIMES])

    def values_at(self, state: State) -> dict:
        """Mapping Regime -> value at one state."""
        vals = self.regime_values(np.array([state.s]), np.array([state.i]))
        return {regime: float(vals[regime.index, 0]) for regime in ALL_REGIMES}


class GridValueSource(ValueSource):
    """Piecewise-linear interpolation of a grid field.

    Full cells use bilinear weights; cells cut by the hypotenuse use
    barycentric weights on their lower-left triangle.
    """

    def __init__(self, field: ValueField):
        self.field = field
        self.grid: Grid = field.grid
        self.params_hash = field.metadata.get("params_hash")

    def _locate(self, s, i):
        n = self.grid.n
        x = np.clip(np.asarray(s, dtype=float).reshape(-1), 0.0, 1.0) * n
        y = np.clip(np.asarray(i, dtype=float).reshape(-1), 0.0, 1.0) * n
        j0 = np.clip(np.floor(x).astype(np.int64), 0, n - 1)
        k0 = np.clip(np.floor(y).astype(np.int64), 0, n - 1)

        # Points sitting exactly on a hypotenuse node: step back into the cut cell
        over = j0 + k0 > n - 1
        back_k = over & (k0 > 0)
        back_j = over & ~back_k
        k0 = np.where(back_k, k0 - 1, k0)
        j0 = np.where(back_j, j0 - 1, j0)
        return j0, k0, x - j0, y - k0

    def value(self, s, i, a: int, p: int) -> np.ndarray:
        v = self.field.values[Regime(a, p).index]
        n = self.grid.n
        j0, k0, fx, fy = self._locate(s, i)

        full = j0 + k0 + 2 <= n
        out = np.empty(j0.shape, dtype=float)

        if np.any(full):
            jf, kf, ux, uy = j0[full], k0[full], fx[full], fy[full]
            out[full] = (
                (1 - ux) * (1 - uy) * v[jf, kf]
                + ux * (1 - uy) * v[jf + 1, kf]
                + (1 - ux) * uy * v[jf, kf + 1]
                + ux * uy * v[jf + 1, kf + 1]
            )

        cut = ~full
        if np.any(cut):
            jc, kc = j0[cut], k0[cut]
            bary = self._barycentric(fx[cut], fy[cut])
            out[cut] = (
                bary[:, 0] * v[jc, kc]
                + bary[:, 1] * v[jc + 1, kc]
                + bary[:, 2] * v[jc, kc + 1]
            )
        return out

    @staticmethod
    def _barycentric(fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        """Weights of (fx, fy) in the unit triangle (0,0), (1,0), (0,1).

        Points marginally outside (rounding) are pulled back onto it.
        """
        fx = np.clip(fx, 0.0, 1.0)
        fy = np.clip(fy, 0.0, 1.0)
        total = fx + fy
        scale = np.where(total > 1.0, total, 1.0)
        u, w = fx / scale, fy / scale
        return np.stack([1.0 - u - w, u, w], axis=1)


class NetworkValueSource(ValueSource):
    """Values from four trained networks keyed by Regime."""

    def __init__(self, nets: dict, params_hash: Optional[str] = None):
        missing = [r for r in ALL_REGIMES if r not in nets]
        if missing:
            raise ValueError(f"networks missing for regimes {missing}")
        self.nets = nets
        self.params_hash = params_hash

    def value(self, s, i, a: int, p: int) -> np.ndarray:
        net = self.nets[Regime(a, p)]
        x = np.stack([
            np.asarray(s, dtype=float).reshape(-1),
            np.asarray(i, dtype=float).reshape(-1),
        ], axis=1)
        with torch.no_grad():
            return net(torch.as_tensor(x, dtype=torch.float64)).numpy().copy()


def check_params_hash(source: ValueSource, expected: str) -> None:
    """Refuse a value source solved for other parameters.

    Raises:
        ParamsMismatchError: Hashes differ (a source without a hash passes)
    """
    if source.params_hash is not None and source.params_hash != expected:
        raise ParamsMismatchError(
            f"value source was built for params hash {source.params_hash}, "
            f"but the config hashes to {expected}"
        )
