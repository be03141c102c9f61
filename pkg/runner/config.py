"""Scenario configuration: loading, validation and defaults."""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from testbed.dynamics import CONTROL_GAIN_PER_S, DEFAULT_DT_S
from testbed.enactment import SETTLE_TAIL_S, NoiseSpec
from testbed.params import FIELD_NAMES, ROPE_LENGTH_GRID, VELOCITY_DEFICIT_GRID, CraneParams, FaultKind, FaultSpec, load_params
from twin.estimation import InitialGuessPolicy
from twin.metrics import MetricConfig
from twin.replication import OMEGA_RULES
from twin.traces import Quantity
from twin.validator import DEFAULT_QUANTITIES, VerdictPolicy

STORE_ENV_VAR = "TWINWATCH_STORE"


class ConfigError(Exception):
    """Configuration error with helpful message."""

    def __init__(self, field: str, message: str, hint: Optional[str] = None):
        self.field = field
        self.hint = hint
        full_msg = f"Config error in '{field}': {message}"
        if hint:
            full_msg += f"\n  Hint: {hint}"
        super().__init__(full_msg)


@dataclass(frozen=True)
class FaultWindow:
    """A fault active on runs first..last (1-based, inclusive)."""

    first: int
    last: int
    fault: FaultSpec

    def covers(self, index: int) -> bool:
        return self.first <= index <= self.last


@dataclass(frozen=True)
class SensitivitySettings:
    deltas: Tuple[float, ...] = ROPE_LENGTH_GRID
    runs_per_delta: int = 30
    nominal_runs: int = 50
    quantity: Quantity = Quantity.ANGULAR_POSITION


@dataclass(frozen=True)
class DetectionSettings:
    deltas: Tuple[float, ...] = VELOCITY_DEFICIT_GRID
    runs_per_delta: int = 10
    normal_runs: int = 10


@dataclass(frozen=True)
class EstimationSettings:
    runs: int = 50
    delta_fraction: float = 0.10
    policies: Tuple[InitialGuessPolicy, ...] = (
        InitialGuessPolicy.reference_max(),
        InitialGuessPolicy.fraction_of_reference(0.9),
        InitialGuessPolicy.measured_max_passthrough(),
    )
    bins: int = 20


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario settings."""

    params: CraneParams = field(default_factory=CraneParams)
    move: Tuple[float, float] = (0.1, 0.6)
    sample_period_s: float = 0.01
    dt_s: float = DEFAULT_DT_S
    settle_tail_s: float = SETTLE_TAIL_S
    control_gain_per_s: float = CONTROL_GAIN_PER_S
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    replications: int = 50
    omega_rule: str = "derivative_bound"
    store_replications: bool = True
    store_traces: bool = True
    policy: VerdictPolicy = VerdictPolicy.ANY_BREACH
    quantities: Tuple[Quantity, ...] = DEFAULT_QUANTITIES
    calibration_runs: int = 10
    margin: float = 1.0
    metrics: MetricConfig = field(default_factory=MetricConfig)
    runs: int = 10
    fault_schedule: Tuple[FaultWindow, ...] = ()
    recovery_policy: InitialGuessPolicy = field(default_factory=lambda: InitialGuessPolicy.fraction_of_reference(0.9))
    free_params: Tuple[str, ...] = ("v_max_mps",)
    legacy: bool = False
    seed: int = 0
    output_dir: Path = Path("out")
    store_dir: Optional[Path] = None
    sensitivity: SensitivitySettings = field(default_factory=SensitivitySettings)
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    estimation: EstimationSettings = field(default_factory=EstimationSettings)

    def fault_for(self, index: int) -> FaultSpec:
        """Fault scheduled for the index-th run (1-based)."""
        for window in self.fault_schedule:
            if window.covers(index):
                return window.fault
        return FaultSpec.none()

    @property
    def resolved_store_dir(self) -> Path:
        env = os.environ.get(STORE_ENV_VAR)
        if env:
            return Path(env)
        return self.store_dir if self.store_dir is not None else self.output_dir / "store"


def generate_default_config() -> Dict[str, Any]:
    """Generate a default configuration."""
    return {
        "params": CraneParams().to_dict(),
        "move": {"start_m": 0.1, "end_m": 0.6},
        "noise": NoiseSpec().to_dict(),
        "replications": 50,
        "policy": "majority",
        "calibration_runs": 10,
        "runs": 20,
        "fault_schedule": [{"runs": [11, 20], "kind": "velocity_deficit", "delta_fraction": 0.10}],
        "seed": 42,
        "output_dir": "out/scenario",
    }


def create_config_file(path: Path, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Create a new config file with defaults.

    Returns:
        The config dict that was written
    """
    if config is None:
        config = generate_default_config()

    path.parent.mkdir(parents=True, exist_ok=True)
    body = yaml.safe_dump(config, sort_keys=False, default_flow_style=None)
    content = f"""# twinwatch scenario configuration
# Generated automatically - customize as needed
#
# Runs are numbered from 1. The first `calibration_runs` runs must be fault free:
# they set the thresholds every later run is judged against.
# Any string value of the form ${{VAR}} is read from the environment.

{body}"""
    with open(path, "w") as f:
        f.write(content)
    return config


def _number(config: Dict[str, Any], key: str, errors: List[ConfigError], positive: bool = True) -> None:
    if key not in config:
        return
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(ConfigError(key, f"Must be a number, got {value!r}"))
    elif positive and not value > 0:
        errors.append(ConfigError(key, f"Must be > 0, got {value!r}"))


def _count(config: Dict[str, Any], key: str, errors: List[ConfigError], minimum: int = 1) -> None:
    if key not in config:
        return
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        errors.append(ConfigError(key, f"Must be an integer >= {minimum}, got {value!r}"))


def validate_config(config: Dict[str, Any]) -> List[ConfigError]:
    """Validate configuration and return list of errors.

    Returns:
        List of ConfigError objects (empty if valid)
    """
    errors: List[ConfigError] = []

    for key in ("replications", "runs"):
        _count(config, key, errors)
    _count(config, "calibration_runs", errors, minimum=0)
    _count(config, "seed", errors, minimum=0)
    for key in ("sample_period_s", "dt_s", "control_gain_per_s"):
        _number(config, key, errors)
    _number(config, "settle_tail_s", errors, positive=False)

    params = config.get("params", {})
    if not isinstance(params, dict):
        errors.append(ConfigError("params", "Must be a mapping of crane parameters"))
    else:
        unknown = sorted(set(params) - set(FIELD_NAMES))
        if unknown:
            errors.append(ConfigError("params", f"Unknown crane parameters {unknown}", f"Known: {', '.join(FIELD_NAMES)}"))

    move = config.get("move", {})
    if not isinstance(move, dict) or not set(move) <= {"start_m", "end_m"}:
        errors.append(ConfigError("move", "Must be a mapping with start_m and end_m", "move: {start_m: 0.1, end_m: 0.6}"))

    if "policy" in config:
        try:
            VerdictPolicy.parse(config["policy"])
        except ValueError:
            errors.append(ConfigError("policy", f"Unknown policy {config['policy']!r}", "Use 'any' or 'majority'"))

    if config.get("omega_rule", "derivative_bound") not in OMEGA_RULES:
        errors.append(ConfigError("omega_rule", f"Must be one of {OMEGA_RULES}"))

    for q in config.get("quantities", []):
        if q not in {member.value for member in Quantity}:
            errors.append(ConfigError("quantities", f"Unknown quantity {q!r}"))

    noise = config.get("noise", {})
    if not isinstance(noise, dict):
        errors.append(ConfigError("noise", "Must be a mapping of sensor sigmas"))
    else:
        try:
            NoiseSpec.from_dict(noise)
        except (ValueError, TypeError) as e:
            errors.append(ConfigError("noise", str(e)))

    metrics = config.get("metrics", {})
    if not isinstance(metrics, dict):
        errors.append(ConfigError("metrics", "Must be a mapping"))
    else:
        try:
            MetricConfig(**metrics)
        except (ValueError, TypeError) as e:
            errors.append(ConfigError("metrics", str(e), "Known keys: eps_sigma, eps_mean, eps_sigma_by_quantity, eps_mean_by_quantity"))

    thresholds = config.get("thresholds", {})
    if not isinstance(thresholds, dict):
        errors.append(ConfigError("thresholds", "Must be a mapping", "thresholds: {margin: 1.0}"))
    else:
        _number(thresholds, "margin", errors)

    estimation = config.get("estimation", {})
    if isinstance(estimation, dict) and "policy" in estimation:
        try:
            InitialGuessPolicy.parse(str(estimation["policy"]))
        except ValueError as e:
            errors.append(ConfigError("estimation.policy", str(e), "Example: fraction_of_reference(0.9)"))

    errors.extend(_validate_schedule(config))
    return errors


def _validate_schedule(config: Dict[str, Any]) -> List[ConfigError]:
    errors: List[ConfigError] = []
    schedule = config.get("fault_schedule", [])
    if not isinstance(schedule, list):
        return [ConfigError("fault_schedule", "Must be a list", "fault_schedule:\n  - runs: [11, 20]\n    kind: velocity_deficit\n    delta_fraction: 0.1")]

    runs = config.get("runs", 10)
    calibration = config.get("calibration_runs", 10)
    taken: List[Tuple[int, int]] = []
    for i, entry in enumerate(schedule):
        name = f"fault_schedule[{i}]"
        if not isinstance(entry, dict) or "runs" not in entry:
            errors.append(ConfigError(name, "Each entry needs 'runs', 'kind' and 'delta_fraction'"))
            continue
        span = entry["runs"]
        if not isinstance(span, list) or len(span) != 2 or not all(isinstance(v, int) for v in span):
            errors.append(ConfigError(f"{name}.runs", f"Must be [first, last], got {span!r}"))
            continue
        first, last = span
        if first < 1 or last < first:
            errors.append(ConfigError(f"{name}.runs", f"Invalid run range {span}", "Runs are numbered from 1"))
            continue
        if isinstance(runs, int) and last > runs:
            errors.append(ConfigError(f"{name}.runs", f"Range {span} ends after the last run ({runs})"))
        if isinstance(calibration, int) and first <= calibration:
            errors.append(ConfigError(
                f"{name}.runs",
                f"Range {span} overlaps the {calibration} calibration runs",
                "Calibration runs must be fault free",
            ))
        for a, b in taken:
            if first <= b and a <= last:
                errors.append(ConfigError(f"{name}.runs", f"Range {span} overlaps [{a}, {b}]"))
        taken.append((first, last))
        try:
            FaultSpec(FaultKind(entry.get("kind", "none")), float(entry.get("delta_fraction", 0.0)))
        except (ValueError, TypeError) as e:
            errors.append(ConfigError(name, str(e), f"kind is one of {[k.value for k in FaultKind]}"))
    return errors


def _expand_env_vars(obj: Any) -> Any:
    """Recursively expand ${VAR} patterns in strings."""
    if isinstance(obj, str):
        if obj.startswith("${") and obj.endswith("}"):
            var_name = obj[2:-1]
            return os.environ.get(var_name, obj)
        return obj
    elif isinstance(obj, dict):
        return {k: _expand_env_vars(v) for k, v in obj.items()}
    elif isinstance(obj, list):
        return [_expand_env_vars(item) for item in obj]
    return obj


def _deltas(value: Any, default: Tuple[float, ...]) -> Tuple[float, ...]:
    if value is None or value == "grid":
        return default
    return tuple(float(v) for v in value)


def build_config(config: Dict[str, Any], base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Turn a validated config dict into a ScenarioConfig.

    A relative params_file is resolved against `base_dir` (the config file's directory);
    output and store directories stay relative to the working directory.
    """
    base_dir = base_dir or Path.cwd()

    def resolve(value: Any) -> Path:
        path = Path(value)
        return path if path.is_absolute() else base_dir / path

    params = CraneParams()
    if config.get("params_file"):
        params = load_params(resolve(config["params_file"]))
    if config.get("params"):
        params = params.with_changes(**{k: float(v) for k, v in config["params"].items()})

    seed = int(config.get("seed", 0))
    noise = NoiseSpec.from_dict({**config.get("noise", {}), "seed": seed})
    move = config.get("move", {})
    schedule = tuple(
        FaultWindow(
            int(entry["runs"][0]),
            int(entry["runs"][1]),
            FaultSpec(FaultKind(entry.get("kind", "none")), float(entry.get("delta_fraction", 0.0))),
        )
        for entry in config.get("fault_schedule", [])
    )
    estimation = config.get("estimation", {})
    studies = config.get("studies", {})
    sens, det, est = studies.get("sensitivity", {}), studies.get("detection", {}), studies.get("estimation", {})

    return ScenarioConfig(
        params=params,
        move=(float(move.get("start_m", 0.1)), float(move.get("end_m", 0.6))),
        sample_period_s=float(config.get("sample_period_s", 0.01)),
        dt_s=float(config.get("dt_s", DEFAULT_DT_S)),
        settle_tail_s=float(config.get("settle_tail_s", SETTLE_TAIL_S)),
        control_gain_per_s=float(config.get("control_gain_per_s", CONTROL_GAIN_PER_S)),
        noise=noise,
        replications=int(config.get("replications", 50)),
        omega_rule=config.get("omega_rule", "derivative_bound"),
        store_replications=bool(config.get("store_replications", True)),
        store_traces=bool(config.get("store_traces", True)),
        policy=VerdictPolicy.parse(config.get("policy", "any")),
        quantities=tuple(Quantity(q) for q in config.get("quantities", [q.value for q in DEFAULT_QUANTITIES])),
        calibration_runs=int(config.get("calibration_runs", 10)),
        margin=float(config.get("thresholds", {}).get("margin", 1.0)),
        metrics=MetricConfig(**config.get("metrics", {})),
        runs=int(config.get("runs", 10)),
        fault_schedule=schedule,
        recovery_policy=InitialGuessPolicy.parse(str(estimation.get("policy", "fraction_of_reference(0.9)"))),
        free_params=tuple(estimation.get("free_params", ["v_max_mps"])),
        legacy=bool(config.get("legacy", False)),
        seed=seed,
        output_dir=Path(config.get("output_dir", "out")),
        store_dir=Path(config["store_dir"]) if config.get("store_dir") else None,
        sensitivity=SensitivitySettings(
            deltas=_deltas(sens.get("deltas"), ROPE_LENGTH_GRID),
            runs_per_delta=int(sens.get("runs_per_delta", 30)),
            nominal_runs=int(sens.get("nominal_runs", 50)),
            quantity=Quantity(sens.get("quantity", Quantity.ANGULAR_POSITION.value)),
        ),
        detection=DetectionSettings(
            deltas=_deltas(det.get("deltas"), VELOCITY_DEFICIT_GRID),
            runs_per_delta=int(det.get("runs_per_delta", 10)),
            normal_runs=int(det.get("normal_runs", 10)),
        ),
        estimation=EstimationSettings(
            runs=int(est.get("runs", 50)),
            delta_fraction=float(est.get("delta_fraction", 0.10)),
            policies=tuple(InitialGuessPolicy.parse(str(p)) for p in est["policies"])
            if "policies" in est
            else EstimationSettings().policies,
            bins=int(est.get("bins", 20)),
        ),
    )


def load_config(config_path: str, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """Load a scenario configuration from a YAML (or JSON) file.

    `overrides` replace top-level keys before validation (command-line flags).

    Raises:
        FileNotFoundError: If config file not found
        ConfigError: If validation fails
    """
    path = Path(config_path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    with open(path) as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError("<file>", f"Not valid YAML/JSON: {e}") from None
    if not isinstance(config, dict):
        raise ConfigError("<file>", "Top level must be a mapping")

    # Expand environment variables
    config = _expand_env_vars(config)
    config.update({k: v for k, v in (overrides or {}).items() if v is not None})

    errors = validate_config(config)
    if errors:
        # Raise first error
        raise errors[0]

    try:
        return build_config(config, path.parent)
    except (ValueError, TypeError, OSError) as e:
        raise ConfigError("<file>", str(e)) from e
