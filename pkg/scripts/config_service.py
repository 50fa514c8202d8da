"""Run configuration loading.

Run configs are plain-text ``key = value`` files:

    # scenario 1 with constant switching costs
    beta = 0.04
    gamma = 0.02
    ...
    g01 = 0.002          # trailing comments are allowed
    g10 = 0.002

One key per line, ``#`` starts a comment, blank lines are ignored, there
are no sections. Keys are lower snake case; unknown and duplicate keys are
errors reported with their line number.

Named scenario presets live in ``config/scenarios.json`` and go through
the same key validation.
"""

import json
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from attacks import (
    ATTACK_STREAM,
    AttackSchedule,
    constant_attack,
    explicit_attack,
    load_explicit_schedule,
    poisson_attack,
)
from model import (
    ConfigError,
    ModelParams,
    Regime,
    State,
    SwitchCosts,
    SwitchCostSpec,
    params_hash,
)
from sde import PathConfig
from switching_constants import DEFAULT_HORIZON, DEFAULT_SEED, DEFAULT_STEP, SCENARIOS_FILE

__all__ = [
    "MODEL_KEYS",
    "KNOWN_KEYS",
    "REQUIRED_KEYS",
    "RunConfig",
    "parse_config_text",
    "build_run_config",
    "render_config",
    "ConfigService",
    "ScenarioCatalog",
    "get_scenario_catalog",
    "resolve_scenario_name",
]

# Config key -> ModelParams field
MODEL_KEYS = {
    "beta": "beta",
    "gamma": "gamma",
    "rho": "rho",
    "nu": "nu",
    "kappa": "kappa",
    "sigma": "sigma",
    "delta": "delta",
    "c_i": "c_I",
    "c_v": "c_V",
}
COST_KEYS = ("g01", "g10", "g01_mode", "g10_mode", "g01_ref", "g10_ref")
STATE_KEYS = ("s0", "i0", "a0", "p0")
PATH_KEYS = ("t0", "horizon", "step", "seed")
ATTACK_KEYS = ("attack", "attack_lambda", "attack_file", "attack_times")

KNOWN_KEYS = tuple(MODEL_KEYS) + COST_KEYS + STATE_KEYS + PATH_KEYS + ATTACK_KEYS
REQUIRED_KEYS = tuple(MODEL_KEYS) + ("g01", "g10")

SCENARIO_ALIASES = {"1": "scenario1", "2": "scenario2"}

_KEY_PATTERN = re.compile(r"^[a-z][a-z0-9_]*$")


# =============================================================================
# Run configuration
# =============================================================================

class RunConfig(BaseModel):
    """Everything a solve/simulate/evaluate run reads from its config."""

    model_config = ConfigDict(frozen=True)

    params: ModelParams
    costs: SwitchCosts
    s0: float = Field(1.0, ge=0, le=1)
    i0: float = Field(0.0, ge=0, le=1)
    a0: int = Field(1, ge=0, le=1)
    p0: int = Field(0, ge=0, le=1)
    t0: float = 0.0
    horizon: float = DEFAULT_HORIZON
    step: float = Field(DEFAULT_STEP, gt=0)
    seed: int = Field(DEFAULT_SEED, ge=0)
    attack: Literal["constant", "poisson", "explicit"] = "constant"
    attack_lambda: float = Field(0.0, ge=0)
    attack_file: Optional[str] = None
    attack_times: tuple[float, ...] = ()
    source: str = "<memory>"

    @property
    def params_hash(self) -> str:
        return params_hash(self.params, self.costs)

    def initial_state(self) -> State:
        return State(self.s0, self.i0)

    def initial_regime(self) -> Regime:
        return Regime(self.a0, self.p0)

    def path_config(self, horizon: Optional[float] = None, seed: Optional[int] = None) -> PathConfig:
        return PathConfig(
            t0=self.t0,
            horizon=self.horizon if horizon is None else horizon,
            step=self.step,
            seed=self.seed if seed is None else seed,
            initial_state=self.initial_state(),
            initial_regime=self.initial_regime(),
        )

    def attack_schedule(self, seed: Optional[int] = None) -> AttackSchedule:
        """Attack schedule of path 0 (Poisson schedules are redrawn per path)."""
        seed = self.seed if seed is None else seed
        if self.attack == "poisson":
            return poisson_attack(self.attack_lambda, self.a0, self.horizon,
                                  seed=[seed, 0, ATTACK_STREAM], min_gap=self.step)
        if self.attack == "explicit":
            if self.attack_file:
                return load_explicit_schedule(Path(self.attack_file), self.a0)
            return explicit_attack(self.a0, self.attack_times)
        return constant_attack(self.a0)


# =============================================================================
# Parsing
# =============================================================================

def parse_config_text(text: str) -> Dict[str, tuple]:
    """Split config text into {key: (raw value, line number)}.

    Raises:
        ConfigError: Malformed line, bad key name, unknown or duplicate key
    """
    entries: Dict[str, tuple] = {}
    for line_num, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=line_num)
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY_PATTERN.match(key):
            raise ConfigError(f"bad key name {key!r} (lower snake case expected)",
                              line=line_num, key=key)
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key '{key}'", line=line_num, key=key)
        if key in entries:
            raise ConfigError(f"duplicate key '{key}' (first set on line {entries[key][1]})",
                              line=line_num, key=key)
        if not value:
            raise ConfigError(f"key '{key}' has no value", line=line_num, key=key)
        entries[key] = (value, line_num)
    return entries


def _number(entries: Dict[str, tuple], key: str, kind=float):
    raw, line = entries[key]
    try:
        if kind is int:
            number = float(raw)
            if number != int(number):
                raise ValueError
            return int(number)
        return float(raw)
    except ValueError:
        raise ConfigError(f"key '{key}' expects a number, got {raw!r}", line=line, key=key)


def _cost_spec(entries: Dict[str, tuple], name: str) -> SwitchCostSpec:
    mode_key, ref_key = f"{name}_mode", f"{name}_ref"
    mode = entries[mode_key][0] if mode_key in entries else "constant"
    if mode not in ("constant", "proportional"):
        raise ConfigError(f"'{mode_key}' must be constant or proportional, got {mode!r}",
                          line=entries[mode_key][1], key=mode_key)
    ref_p = _number(entries, ref_key, int) if ref_key in entries else None
    try:
        return SwitchCostSpec(kind=mode, value=_number(entries, name), ref_p=ref_p)
    except ValidationError as e:
        raise ConfigError(_first_message(e), line=entries[name][1], key=name)


def _first_message(error: ValidationError) -> str:
    first = error.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    return f"{loc}: {first['msg']}" if loc else first["msg"]


def build_run_config(entries: Dict[str, tuple], source: str = "<memory>") -> RunConfig:
    """Validate parsed entries into a RunConfig.

    Raises:
        ConfigError: Missing required key or invalid value
    """
    for key in REQUIRED_KEYS:
        if key not in entries:
            raise ConfigError(f"missing required key '{key}'", key=key)

    model_values = {field: _number(entries, key) for key, field in MODEL_KEYS.items()}
    try:
        params = ModelParams(**model_values)
    except ValidationError as e:
        field = str(e.errors()[0]["loc"][0])
        key = next(k for k, f in MODEL_KEYS.items() if f == field)
        raise ConfigError(_first_message(e), line=entries[key][1], key=key)

    costs = SwitchCosts(g01=_cost_spec(entries, "g01"), g10=_cost_spec(entries, "g10"))

    extra: Dict[str, Any] = {}
    for key in ("s0", "i0", "t0", "horizon", "step", "attack_lambda"):
        if key in entries:
            extra[key] = _number(entries, key)
    for key in ("a0", "p0", "seed"):
        if key in entries:
            extra[key] = _number(entries, key, int)
    if "attack" in entries:
        extra["attack"] = entries["attack"][0]
    if "attack_file" in entries:
        extra["attack_file"] = entries["attack_file"][0]
    if "attack_times" in entries:
        raw, line = entries["attack_times"]
        try:
            extra["attack_times"] = tuple(float(t) for t in raw.split(",") if t.strip())
        except ValueError:
            raise ConfigError(f"'attack_times' expects comma-separated numbers, got {raw!r}",
                              line=line, key="attack_times")

    try:
        config = RunConfig(params=params, costs=costs, source=source, **extra)
    except ValidationError as e:
        key = str(e.errors()[0]["loc"][0])
        line = entries[key][1] if key in entries else None
        raise ConfigError(_first_message(e), line=line, key=key)

    if config.s0 + config.i0 > 1.0:
        raise ConfigError("s0 + i0 must not exceed 1", key="i0")
    if config.attack == "poisson" and "attack_lambda" not in entries:
        raise ConfigError("attack = poisson needs 'attack_lambda'", key="attack_lambda")
    try:
        config.path_config()
        config.attack_schedule()
    except ValueError as e:
        raise ConfigError(str(e))
    return config


def render_config(config: RunConfig) -> str:
    """Config text that parses back to ``config``."""
    lines = [f"# source: {config.source}"]
    for key, field in MODEL_KEYS.items():
        lines.append(f"{key} = {getattr(config.params, field)!r}")
    for name, spec in (("g01", config.costs.g01), ("g10", config.costs.g10)):
        lines.append(f"{name} = {spec.value!r}")
        lines.append(f"{name}_mode = {spec.kind}")
        if spec.ref_p is not None:
            lines.append(f"{name}_ref = {spec.ref_p}")
    for key in STATE_KEYS + PATH_KEYS:
        lines.append(f"{key} = {getattr(config, key)!r}")
    lines.append(f"attack = {config.attack}")
    if config.attack == "poisson":
        lines.append(f"attack_lambda = {config.attack_lambda!r}")
    if config.attack_file:
        lines.append(f"attack_file = {config.attack_file}")
    if config.attack_times:
        lines.append("attack_times = " + ", ".join(repr(t) for t in config.attack_times))
    return "\n".join(lines) + "\n"


# =============================================================================
# Services
# =============================================================================

class ConfigService:
    """Lazy, cached access to one run config file."""

    def __init__(self, config_path: Path):
        self.config_path = Path(config_path)
        self._config: Optional[RunConfig] = None

    def _load_config(self) -> RunConfig:
        if not self.config_path.exists():
            raise ConfigError(f"config file not found: {self.config_path}")
        text = self.config_path.read_text(encoding="utf-8")
        return build_run_config(parse_config_text(text), source=str(self.config_path))

    @property
    def config(self) -> RunConfig:
        if self._config is None:
            self._config = self._load_config()
        return self._config

    @classmethod
    def from_preset(cls, name: str, catalog: Optional["ScenarioCatalog"] = None) -> "ConfigService":
        catalog = catalog or get_scenario_catalog()
        service = cls(catalog.config_path)
        service._config = catalog.run_config(name)
        return service


class ScenarioCatalog:
    """Named scenario presets loaded from JSON."""

    def __init__(self, config_path: Optional[Path] = None):
        self.config_path = Path(config_path) if config_path else SCENARIOS_FILE
        self._config: Optional[Dict[str, Any]] = None

    def _load_config(self) -> Dict[str, Any]:
        if not self.config_path.exists():
            raise ConfigError(f"scenario file not found: {self.config_path}")
        try:
            with open(self.config_path, "r") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{self.config_path}: invalid JSON ({e})", line=e.lineno)

    @property
    def config(self) -> Dict[str, Any]:
        if self._config is None:
            self._config = self._load_config()
        return self._config

    def get_presets(self) -> Dict[str, Dict[str, Any]]:
        return self.config.get("presets", {})

    def get_preset(self, name: str) -> Optional[Dict[str, Any]]:
        return self.get_presets().get(resolve_scenario_name(name))

    def preset_names(self) -> List[str]:
        return sorted(self.get_presets())

    def run_config(self, name: str) -> RunConfig:
        """Validated RunConfig of a preset.

        Raises:
            ConfigError: Unknown preset or invalid preset settings
        """
        preset = self.get_preset(name)
        if preset is None:
            raise ConfigError(
                f"unknown scenario {name!r} (available: {', '.join(self.preset_names())})"
            )
        settings = preset.get("settings", {})
        unknown = [key for key in settings if key not in KNOWN_KEYS]
        if unknown:
            raise ConfigError(f"scenario {name!r} has unknown keys {unknown}")
        entries = {key: (_setting_text(value), None) for key, value in settings.items()}
        return build_run_config(entries, source=f"scenario:{resolve_scenario_name(name)}")


def _setting_text(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def resolve_scenario_name(name: str) -> str:
    return SCENARIO_ALIASES.get(str(name), str(name))


_scenario_catalog = None


def get_scenario_catalog() -> ScenarioCatalog:
    """Global scenario catalog instance."""
    global _scenario_catalog
    if _scenario_catalog is None:
        _scenario_catalog = ScenarioCatalog()
    return _scenario_catalog
