"""Crane parameters, plant state and fault injection."""

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import yaml

from .errors import DomainError

# Study grids: rope length -10%..+10% in 0.5% steps, velocity deficits in percent.
ROPE_LENGTH_GRID: Tuple[float, ...] = tuple(round(-0.10 + 0.005 * i, 4) for i in range(41))
VELOCITY_DEFICIT_GRID: Tuple[float, ...] = (0.02, 0.05, 0.10, 0.15, 0.20)


@dataclass(frozen=True)
class CraneParams:
    """Model parameters shared by the plant and its twin (SI units)."""

    rope_length_m: float = 0.4
    gravity_mps2: float = 9.81
    v_max_mps: float = 0.281
    a_max_mps2: float = 2.0
    damping_per_s: float = 0.05
    track_length_m: float = 0.7

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise DomainError(f.name, value, f"'{f.name}' must be a finite number")
        for name in ("rope_length_m", "gravity_mps2", "v_max_mps", "a_max_mps2", "track_length_m"):
            if getattr(self, name) <= 0:
                raise DomainError(name, getattr(self, name), f"'{name}' must be > 0")
        if self.damping_per_s < 0:
            raise DomainError("damping_per_s", self.damping_per_s, "'damping_per_s' must be >= 0")

    @property
    def natural_frequency_radps(self) -> float:
        """Undamped small-angle swing frequency sqrt(g/L)."""
        return math.sqrt(self.gravity_mps2 / self.rope_length_m)

    @property
    def damping_ratio(self) -> float:
        return self.damping_per_s / (2.0 * self.natural_frequency_radps)

    @property
    def swing_period_s(self) -> float:
        return 2.0 * math.pi / self.natural_frequency_radps

    def with_changes(self, **changes: float) -> "CraneParams":
        unknown = set(changes) - set(FIELD_NAMES)
        if unknown:
            raise DomainError("params", sorted(unknown), f"Unknown crane parameters: {sorted(unknown)}")
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CraneParams":
        unknown = set(data) - set(FIELD_NAMES)
        if unknown:
            raise DomainError("params", sorted(unknown), f"Unknown crane parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


FIELD_NAMES: Tuple[str, ...] = tuple(f.name for f in fields(CraneParams))


def load_params(path: Union[str, Path]) -> CraneParams:
    """Load a parameter file (JSON or YAML mapping of CraneParams field names)."""
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise DomainError("params", type(data).__name__, f"Parameter file {path} must hold a mapping")
    return CraneParams.from_dict(data)


def save_params(params: CraneParams, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(params.to_dict(), f, indent=2)
        f.write("\n")


@dataclass(frozen=True)
class PlantState:
    """Cart-pendulum state at one instant."""

    t_s: float = 0.0
    x_m: float = 0.0
    v_mps: float = 0.0
    theta_rad: float = 0.0
    omega_radps: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise DomainError(f.name, value, f"Plant state '{f.name}' is not finite")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        """State vector without time: (x, v, theta, omega)."""
        return (self.x_m, self.v_mps, self.theta_rad, self.omega_radps)

    @classmethod
    def at_rest(cls, x_m: float) -> "PlantState":
        return cls(0.0, x_m, 0.0, 0.0, 0.0)


class FaultKind(str, Enum):
    NONE = "none"
    ROPE_LENGTH_ERROR = "rope_length_error"
    VELOCITY_DEFICIT = "velocity_deficit"


@dataclass(frozen=True)
class FaultSpec:
    """Divergence injected between the plant and its twin."""

    kind: FaultKind = FaultKind.NONE
    delta_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if not math.isfinite(self.delta_fraction):
            raise DomainError("delta_fraction", self.delta_fraction)
        if self.delta_fraction <= -1.0:
            raise DomainError(
                "delta_fraction", self.delta_fraction, "Fault delta must be greater than -1"
            )

    @classmethod
    def none(cls) -> "FaultSpec":
        return cls(FaultKind.NONE, 0.0)

    @property
    def in_study_range(self) -> bool:
        """True when the fault lies on the grids used by the studies."""
        if self.kind is FaultKind.ROPE_LENGTH_ERROR:
            return -0.10 - 1e-12 <= self.delta_fraction <= 0.10 + 1e-12
        if self.kind is FaultKind.VELOCITY_DEFICIT:
            return any(abs(self.delta_fraction - d) < 1e-12 for d in VELOCITY_DEFICIT_GRID)
        return True

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "delta_fraction": self.delta_fraction}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FaultSpec":
        return cls(FaultKind(data.get("kind", "none")), float(data.get("delta_fraction", 0.0)))


def apply_fault(params: CraneParams, fault: FaultSpec) -> CraneParams:
    """Return the plant parameters that diverge from `params` by `fault`.

    A velocity deficit is expressed the inverted way: the twin keeps its belief and the
    plant's attainable velocity becomes v_max / (1 + delta).
    """
    if fault.delta_fraction <= -1.0:
        raise DomainError("delta_fraction", fault.delta_fraction, "Fault delta must be greater than -1")
    if fault.kind is FaultKind.ROPE_LENGTH_ERROR:
        return params.with_changes(rope_length_m=params.rope_length_m * (1.0 + fault.delta_fraction))
    if fault.kind is FaultKind.VELOCITY_DEFICIT:
        return params.with_changes(v_max_mps=params.v_max_mps / (1.0 + fault.delta_fraction))
    return params
