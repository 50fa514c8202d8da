"""CSV, JSON and manifest artifacts written by the command line.

All numbers are written with 10 significant digits so reruns with the
same manifest produce byte-identical files.
"""

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch
from torch import nn

from dgm import LossRecord, Network
from model import ALL_REGIMES, ConfigError, Regime
from policy import RegionMask
from sde import PathBatch, SwitchEvent, Trajectory
from switching_constants import CHECKPOINT_VERSION, CSV_DIGITS
from value_source import GridValueSource, NetworkValueSource, ValueSource
from vi_grid import Grid, ResidualReport, ValueField

__all__ = [
    "fmt",
    "atomic_write_text",
    "write_manifest",
    "read_manifest",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_switch_log",
    "read_switch_log",
    "write_controlled_log",
    "write_aggregate_csv",
    "write_path_summary_csv",
    "write_field_csv",
    "read_field_csv",
    "write_region_csv",
    "read_region_csv",
    "write_residuals_csv",
    "write_loss_trace",
    "read_loss_trace",
    "save_checkpoint",
    "load_checkpoint",
    "load_value_source",
    "write_mc_summary",
    "write_comparison_csv",
]

ACTORS = {"attack": "hacker", "protection": "owner"}


def fmt(x) -> str:
    return f"{float(x):.{CSV_DIGITS}g}"


def atomic_write_text(path: Path, text: str) -> None:
    """Write to a temp file next to ``path``, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    with open(temp_file, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    temp_file.replace(path)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence],
                comment: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _read_rows(path: Path) -> tuple[list[dict], list[str]]:
    """Rows as dicts plus any leading ``#`` comment lines."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        lines = f.read().splitlines()
    comments = [line[1:].strip() for line in lines if line.startswith("#")]
    body = [line for line in lines if not line.startswith("#")]
    return list(csv.DictReader(body)), comments


# =============================================================================
# Manifests
# =============================================================================

def write_manifest(path: Path, entries: Mapping[str, object]) -> Path:
    """key=value manifest, one entry per line in insertion order."""
    lines = []
    for key, value in entries.items():
        text = fmt(value) if isinstance(value, float) else str(value)
        lines.append(f"{key}={text.replace(chr(10), ' ')}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def read_manifest(path: Path) -> dict:
    entries = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            entries[key] = value
    return entries


# =============================================================================
# Trajectories and switch logs
# =============================================================================

def write_trajectory_csv(path: Path, trajectory: Trajectory) -> Path:
    rows = (
        (fmt(t), fmt(s), fmt(i), fmt(r), int(a), int(p))
        for t, s, i, r, a, p in zip(trajectory.times, trajectory.s, trajectory.i,
                                    trajectory.r, trajectory.a, trajectory.p)
    )
    return _write_rows(path, ("t", "s", "i", "r", "a", "p"), rows)


def read_trajectory_csv(path: Path) -> dict:
    """Columns of a trajectory CSV as float arrays."""
    rows, _ = _read_rows(path)
    columns = ("t", "s", "i", "r", "a", "p")
    return {c: np.array([float(row[c]) for row in rows]) for c in columns}


def write_switch_log(path: Path, events: Iterable[SwitchEvent]) -> Path:
    rows = ((fmt(e.time), e.track, e.from_level, e.to_level) for e in events)
    return _write_rows(path, ("time", "track", "from", "to"), rows)


def read_switch_log(path: Path) -> list[SwitchEvent]:
    rows, _ = _read_rows(path)
    events = []
    for row in rows:
        track = row.get("track") or {v: k for k, v in ACTORS.items()}[row["actor"]]
        gap = row.get("value_gap")
        events.append(SwitchEvent(
            time=float(row["time"]),
            track=track,
            from_level=int(row["from"]),
            to_level=int(row["to"]),
            value_gap=float(gap) if gap not in (None, "") else float("nan"),
        ))
    return events


def write_controlled_log(path: Path, events: Iterable[SwitchEvent]) -> Path:
    """Controlled-run log naming the actor (hacker/owner) and the value gap."""
    rows = (
        (fmt(e.time), ACTORS[e.track], e.from_level, e.to_level,
         "" if np.isnan(e.value_gap) else fmt(e.value_gap))
        for e in events
    )
    return _write_rows(path, ("time", "actor", "from", "to", "value_gap"), rows)


def write_aggregate_csv(path: Path, batch: PathBatch) -> Path:
    """Per-step statistics over the paths of a batch."""
    if batch.s is None:
        raise ValueError("aggregate statistics need per-step path data")
    q05, q95 = np.quantile(batch.i, [0.05, 0.95], axis=0)
    columns = (
        batch.times,
        batch.s.mean(axis=0),
        batch.i.mean(axis=0),
        q05,
        q95,
        batch.p.mean(axis=0),
    )
    rows = (tuple(fmt(c[k]) for c in columns) for k in range(len(batch.times)))
    return _write_rows(path, ("t", "mean_s", "mean_i", "q05_i", "q95_i", "mean_p"), rows)


def write_path_summary_csv(path: Path, batch: PathBatch) -> Path:
    counts = batch.protection_switch_counts()
    rows = (
        (int(j), fmt(c), fmt(s), fmt(i), int(n))
        for j, c, s, i, n in zip(batch.path_indices, batch.costs, batch.terminal_s,
                                 batch.terminal_i, counts)
    )
    return _write_rows(path, ("path", "cost", "terminal_s", "terminal_i", "protection_switches"), rows)


# =============================================================================
# Grid fields, regions, residuals
# =============================================================================

def write_field_csv(path: Path, field: ValueField) -> Path:
    """Rows ``a,p,s,i,v`` per regime, nodes in lexicographic (j, k) order.

    The node coordinates are exact multiples of the spacing; the leading
    comment carries the params hash and n needed to reload the field.
    """
    grid = field.grid
    nodes = grid.nodes()
    comment = f"params_hash={field.metadata.get('params_hash', '')},n={grid.n}"
    rows = (
        (r.a, r.p, fmt(j / grid.n), fmt(k / grid.n), fmt(field.values[r.index, j, k]))
        for r in ALL_REGIMES
        for j, k in nodes
    )
    return _write_rows(path, ("a", "p", "s", "i", "v"), rows, comment=comment)


def read_field_csv(path: Path) -> ValueField:
    """Reload an exported field.

    Raises:
        ConfigError: Missing header, wrong node count or off-grid node
    """
    rows, comments = _read_rows(path)
    meta = {}
    for comment in comments:
        for part in comment.split(","):
            if "=" in part:
                key, value = part.split("=", 1)
                meta[key.strip()] = value.strip()
    if "n" not in meta:
        raise ConfigError(f"{path}: missing '# params_hash=...,n=...' header")

    grid = Grid(int(meta["n"]))
    expected = 4 * grid.node_count
    if len(rows) != expected:
        raise ConfigError(f"{path}: expected {expected} rows for n={grid.n}, found {len(rows)}")

    values = np.zeros((4, grid.n + 1, grid.n + 1))
    for row_num, row in enumerate(rows, start=3):
        j = int(round(float(row["s"]) * grid.n))
        k = int(round(float(row["i"]) * grid.n))
        if not grid.contains(j, k):
            raise ConfigError(f"{path}: node ({row['s']}, {row['i']}) outside the grid", line=row_num)
        values[Regime(int(row["a"]), int(row["p"])).index, j, k] = float(row["v"])

    return ValueField(grid=grid, values=values,
                      metadata={"params_hash": meta.get("params_hash") or None,
                                "solver": "grid", "n": grid.n, "source_file": str(path)})


def write_region_csv(path: Path, masks: Sequence[RegionMask]) -> Path:
    rows = []
    for mask in masks:
        grid = mask.grid
        for j, k in grid.nodes():
            rows.append((mask.regime.a, mask.regime.p, fmt(j / grid.n), fmt(k / grid.n),
                         int(mask.switching[j, k])))
    return _write_rows(path, ("a", "p", "s", "i", "in_switching_region"), rows)


def read_region_csv(path: Path) -> list[dict]:
    rows, _ = _read_rows(path)
    return [
        {"a": int(r["a"]), "p": int(r["p"]), "s": float(r["s"]), "i": float(r["i"]),
         "in_switching_region": bool(int(r["in_switching_region"]))}
        for r in rows
    ]


def write_residuals_csv(path: Path, report: ResidualReport, grid: Grid) -> Path:
    rows = (
        (r.a, r.p, fmt(j / grid.n), fmt(k / grid.n), fmt(report.pde[r.index, j, k]),
         fmt(report.gap[r.index, j, k]), fmt(report.combined[r.index, j, k]))
        for r in ALL_REGIMES
        for j, k in grid.nodes()
    )
    return _write_rows(path, ("a", "p", "s", "i", "pde", "gap", "combined"), rows)


# =============================================================================
# Networks
# =============================================================================

def write_loss_trace(path: Path, trace: Sequence[LossRecord]) -> Path:
    rows = (
        (r.step, fmt(r.loss), fmt(r.pde_term), fmt(r.boundary_term), fmt(r.penalty_term))
        for r in trace
    )
    return _write_rows(path, ("step", "loss", "pde_term", "boundary_term", "penalty_term"), rows)


def read_loss_trace(path: Path) -> list[LossRecord]:
    rows, _ = _read_rows(path)
    return [
        LossRecord(int(r["step"]), float(r["loss"]), float(r["pde_term"]),
                   float(r["boundary_term"]), float(r["penalty_term"]))
        for r in rows
    ]


def save_checkpoint(path: Path, nets: dict, params_hash: Optional[str] = None) -> Path:
    """Versioned JSON: widths, activation and theta of each regime's net."""
    first = nets[ALL_REGIMES[0]]
    with torch.no_grad():
        networks = {
            f"{r.a},{r.p}": nn.utils.parameters_to_vector(nets[r].parameters()).tolist()
            for r in ALL_REGIMES
        }
    payload = {
        "version": CHECKPOINT_VERSION,
        "params_hash": params_hash,
        "widths": list(first.widths),
        "activation": first.activation,
        "networks": networks,
    }
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")
    return Path(path)


def load_checkpoint(path: Path) -> tuple[dict, Optional[str]]:
    """Rebuild the four networks of a checkpoint.

    Raises:
        ConfigError: Unreadable file, unknown version or theta of the wrong length
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid checkpoint JSON ({e})", line=e.lineno)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")

    nets = {}
    for regime in ALL_REGIMES:
        net = Network(payload["widths"], payload["activation"], regime)
        theta = payload["networks"].get(f"{regime.a},{regime.p}")
        if theta is None or len(theta) != net.n_params:
            raise ConfigError(f"{path}: parameters of regime {regime} missing or wrong length")
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.tensor(theta, dtype=torch.float64),
                                          net.parameters())
        nets[regime] = net
    return nets, payload.get("params_hash")


def load_value_source(path: Path) -> ValueSource:
    """Field CSV -> grid source, checkpoint JSON -> network source."""
    path = Path(path)
    if path.suffix == ".json":
        nets, hash_ = load_checkpoint(path)
        return NetworkValueSource(nets, hash_)
    return GridValueSource(read_field_csv(path))


# =============================================================================
# Monte Carlo
# =============================================================================

def write_mc_summary(path: Path, estimates: Iterable) -> Path:
    rows = (
        (e.policy, fmt(e.mean), fmt(e.se), fmt(e.tail_bound), e.n_paths, e.seed)
        for e in estimates
    )
    return _write_rows(path, ("policy", "mean", "se", "tail_bound", "n_paths", "seed"), rows)


def write_comparison_csv(path: Path, differences: Iterable) -> Path:
    rows = ((d.policy, d.reference, fmt(d.mean), fmt(d.se)) for d in differences)
    return _write_rows(path, ("policy", "reference", "mean_diff", "se"), rows)
