"""Switching toolkit constants and solver defaults.

Central location for toolkit-wide constants used across modules.
"""

from pathlib import Path

__all__ = [
    "REGIME_ORDER",
    "DEFAULT_HORIZON",
    "DEFAULT_STEP",
    "MC_HORIZON",
    "DEFAULT_SEED",
    "PSOR_TOL",
    "PSOR_MAX_SWEEPS",
    "PSOR_OMEGA",
    "PSOR_MAX_OMEGA",
    "CROSS_SCHEMES",
    "DEFAULT_GRID_N",
    "SWITCH_TOL",
    "MIN_DWELL_STEPS",
    "DGM_WIDTHS",
    "DGM_ACTIVATION",
    "DGM_INTERIOR_BATCH",
    "DGM_BOUNDARY_BATCH",
    "DGM_STEPS",
    "DGM_LEARNING_RATE",
    "DGM_DECAY_STEPS",
    "DGM_STOP_WINDOW",
    "DGM_STOP_LOSS",
    "CHECKPOINT_VERSION",
    "CSV_DIGITS",
    "CONFIDENCE_Z",
    "CONFIG_DIR",
    "SCENARIOS_FILE",
    "TEMPLATES_DIR",
]

# Fixed cyclic order of the (a, p) regimes in every solver pass and array layout
REGIME_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))

# Path defaults (days)
DEFAULT_HORIZON = 30.0
DEFAULT_STEP = 0.125
MC_HORIZON = 60.0
DEFAULT_SEED = 0

# Grid solver
PSOR_TOL = 1e-8
PSOR_MAX_SWEEPS = 100_000
PSOR_OMEGA = 1.0
PSOR_MAX_OMEGA = 1.9
CROSS_SCHEMES = ("monotone", "centered")
DEFAULT_GRID_N = 64

# Controlled simulation
SWITCH_TOL = 1e-9
MIN_DWELL_STEPS = 1

# Deep Galerkin trainer
DGM_WIDTHS = (2, 50, 50, 50, 1)
DGM_ACTIVATION = "tanh"
DGM_INTERIOR_BATCH = 256
DGM_BOUNDARY_BATCH = 64
DGM_STEPS = 50_000
DGM_LEARNING_RATE = 1e-3
DGM_DECAY_STEPS = 1e4
DGM_STOP_WINDOW = 1000
DGM_STOP_LOSS = 1e-6
CHECKPOINT_VERSION = 1

# Output formatting
CSV_DIGITS = 10
CONFIDENCE_Z = 1.96

CONFIG_DIR = Path(__file__).parent.parent / "config"
SCENARIOS_FILE = CONFIG_DIR / "scenarios.json"
TEMPLATES_DIR = Path(__file__).parent.parent / "templates"
