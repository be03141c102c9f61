"""Time series exchanged between the testbed, the twin and the store."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import AlignmentError, ExtrapolationError


class Quantity(str, Enum):
    POSITION = "position"
    VELOCITY = "velocity"
    ANGULAR_POSITION = "angular_position"
    ANGULAR_VELOCITY = "angular_velocity"
    # Logged by the controller; feeds the legacy branch that rebuilds the experiment input.
    COMMANDED_VELOCITY = "commanded_velocity"

    @property
    def unit(self) -> str:
        return QUANTITY_UNITS[self][0]

    @property
    def symbol(self) -> str:
        return QUANTITY_UNITS[self][1]


QUANTITY_UNITS: Dict[Quantity, tuple] = {
    Quantity.POSITION: ("m", "x"),
    Quantity.VELOCITY: ("m/s", "v"),
    Quantity.ANGULAR_POSITION: ("rad", "theta"),
    Quantity.ANGULAR_VELOCITY: ("rad/s", "omega"),
    Quantity.COMMANDED_VELOCITY: ("m/s", "v_cmd"),
}

# Order of the state vector produced by the simulator.
STATE_QUANTITIES = (
    Quantity.POSITION,
    Quantity.VELOCITY,
    Quantity.ANGULAR_POSITION,
    Quantity.ANGULAR_VELOCITY,
)


class TraceKind(str, Enum):
    MEASURED = "measured"
    REFERENCE = "reference"
    SIMULATED = "simulated"
    SIMULATED_MEAN = "simulated_mean"
    SIMULATED_STD = "simulated_std"


@dataclass(frozen=True, eq=False)
class Trace:
    """One quantity of one run over run-relative time."""

    run_id: int
    quantity: Quantity
    kind: TraceKind
    t_s: np.ndarray
    values: np.ndarray
    replication: Optional[int] = None

    def __post_init__(self):
        t = np.asarray(self.t_s, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.shape != t.shape:
            raise AlignmentError(
                f"Trace {self.quantity}: {t.shape} timestamps vs {v.shape} values",
                expected=t.size,
                actual=v.size,
            )
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise AlignmentError(f"Trace {self.quantity}: timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise AlignmentError(f"Trace {self.quantity}: non-finite samples")
        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "quantity", Quantity(self.quantity))
        object.__setattr__(self, "kind", TraceKind(self.kind))

    def __len__(self) -> int:
        return int(self.t_s.size)

    def samples(self):
        return list(zip(self.t_s.tolist(), self.values.tolist()))

    def equals(self, other: "Trace") -> bool:
        """Bit-exact equality of timestamps and values."""
        return (
            self.quantity == other.quantity
            and np.array_equal(self.t_s, other.t_s)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class ReplicationSummary:
    """Per-sample mean and sample standard deviation over R replications.

    `std` is None when only one replication exists.
    """

    run_id: int
    quantity: Quantity
    t_s: np.ndarray
    mean: np.ndarray
    std: Optional[np.ndarray]
    replications: int

    def __post_init__(self):
        if self.replications < 1:
            raise AlignmentError("A summary needs at least one replication")
        if self.mean.shape != self.t_s.shape or (self.std is not None and self.std.shape != self.t_s.shape):
            raise AlignmentError(f"Summary {self.quantity}: mean/std/t lengths differ")
        if self.std is not None and np.any(self.std < 0):
            raise AlignmentError(f"Summary {self.quantity}: negative standard deviation")

    def mean_trace(self) -> Trace:
        return Trace(self.run_id, self.quantity, TraceKind.SIMULATED_MEAN, self.t_s, self.mean)

    def std_trace(self) -> Optional[Trace]:
        if self.std is None:
            return None
        return Trace(self.run_id, self.quantity, TraceKind.SIMULATED_STD, self.t_s, self.std)


def resample(trace: Trace, target_times: Sequence[float]) -> Trace:
    """Linearly interpolate `trace` onto `target_times` without extrapolating."""
    target = np.asarray(target_times, dtype=float)
    if len(trace) == 0:
        raise ExtrapolationError(float(target[0]) if target.size else 0.0, float("nan"), float("nan"))
    first, last = float(trace.t_s[0]), float(trace.t_s[-1])
    if target.size:
        lo, hi = float(target.min()), float(target.max())
        if lo < first:
            raise ExtrapolationError(lo, first, last)
        if hi > last:
            raise ExtrapolationError(hi, first, last)
    if target.size == trace.t_s.size and np.array_equal(target, trace.t_s):
        values = trace.values.copy()
    else:
        values = np.interp(target, trace.t_s, trace.values)
    return Trace(trace.run_id, trace.quantity, trace.kind, target, values, trace.replication)
