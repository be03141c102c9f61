"""Threshold calibration, verdicts and experiment delimiting."""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from testbed.errors import DomainError

from .errors import MissingThresholdError
from .metrics import ALL_METRICS, MetricName, MetricResult
from .traces import Quantity, Trace

if TYPE_CHECKING:
    from server.event_bus import EventBus

logger = logging.getLogger(__name__)

# Quantities that are both simulated and directly measured on the rig.
DEFAULT_QUANTITIES: Tuple[Quantity, ...] = (
    Quantity.POSITION,
    Quantity.VELOCITY,
    Quantity.ANGULAR_POSITION,
)

ThresholdKey = Tuple[MetricName, Quantity]


class VerdictStatus(str, Enum):
    VALID = "valid"
    INVALID = "invalid"
    NEEDS_MODEL_REVISION = "needs_model_revision"


class VerdictPolicy(str, Enum):
    ANY_BREACH = "any_breach"
    MAJORITY_VOTE = "majority_vote"

    @classmethod
    def parse(cls, value: Union[str, "VerdictPolicy"]) -> "VerdictPolicy":
        aliases = {"any": cls.ANY_BREACH, "majority": cls.MAJORITY_VOTE}
        if isinstance(value, str) and value in aliases:
            return aliases[value]
        return cls(value)


@dataclass(frozen=True)
class Breach:
    metric: MetricName
    quantity: Quantity
    value: float
    threshold: float

    def to_dict(self) -> Dict:
        return {
            "metric": self.metric.value,
            "quantity": self.quantity.value,
            "value": self.value,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class ThresholdTable:
    """Acceptance limit per (metric, quantity), with the runs it was calibrated on."""

    entries: Dict[ThresholdKey, float]
    calibration_run_ids: Tuple[int, ...] = ()
    margin: float = 1.0

    def __post_init__(self):
        for (metric, quantity), value in self.entries.items():
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"threshold.{metric.value}.{quantity.value}", value, "Thresholds must be >= 0")

    def get(self, metric: MetricName, quantity: Quantity) -> float:
        key = (MetricName(metric), Quantity(quantity))
        if key not in self.entries:
            raise MissingThresholdError(key[0].value, key[1].value)
        return self.entries[key]

    def __contains__(self, key: ThresholdKey) -> bool:
        return (MetricName(key[0]), Quantity(key[1])) in self.entries

    @property
    def quantities(self) -> Tuple[Quantity, ...]:
        return tuple(sorted({q for _, q in self.entries}, key=lambda q: q.value))

    def to_dict(self) -> Dict:
        return {
            "calibration_run_ids": list(self.calibration_run_ids),
            "margin": self.margin,
            "entries": [
                {"metric": m.value, "quantity": q.value, "threshold": v}
                for (m, q), v in sorted(self.entries.items(), key=lambda kv: (kv[0][1].value, kv[0][0].value))
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ThresholdTable":
        entries = {
            (MetricName(e["metric"]), Quantity(e["quantity"])): float(e["threshold"]) for e in data.get("entries", [])
        }
        return cls(entries, tuple(int(r) for r in data.get("calibration_run_ids", [])), float(data.get("margin", 1.0)))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ThresholdTable":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class Verdict:
    run_id: int
    status: VerdictStatus
    breaches: Tuple[Breach, ...] = ()
    policy: VerdictPolicy = VerdictPolicy.ANY_BREACH
    evaluated: int = 0

    def with_status(self, status: VerdictStatus) -> "Verdict":
        return Verdict(self.run_id, status, self.breaches, self.policy, self.evaluated)

    def to_payload(self) -> Dict:
        return {
            "run_id": self.run_id,
            "status": self.status.value,
            "breaches": [b.to_dict() for b in self.breaches],
            "policy": self.policy.value,
            "evaluated": self.evaluated,
        }

    @classmethod
    def from_payload(cls, data: Dict) -> "Verdict":
        breaches = tuple(
            Breach(MetricName(b["metric"]), Quantity(b["quantity"]), float(b["value"]), float(b["threshold"]))
            for b in data.get("breaches", [])
        )
        return cls(
            int(data["run_id"]),
            VerdictStatus(data["status"]),
            breaches,
            VerdictPolicy(data.get("policy", VerdictPolicy.ANY_BREACH.value)),
            int(data.get("evaluated", 0)),
        )


def calibrate_thresholds(
    metric_results: Iterable[MetricResult],
    quantities: Sequence[Quantity] = DEFAULT_QUANTITIES,
    metrics: Sequence[MetricName] = ALL_METRICS,
    margin: float = 1.0,
) -> ThresholdTable:
    """Set each (metric, quantity) threshold to the maximum value seen on normal runs.

    Degenerate metrics never reach this function (they are absent, not zero).
    `margin` scales every maximum; 1.0 keeps the maximum-observed rule.

    Raises:
        MissingThresholdError: A requested pair has no observation at all
    """
    if not math.isfinite(margin) or margin <= 0:
        raise DomainError("margin", margin, "Threshold margin must be > 0")
    wanted = {(MetricName(m), Quantity(q)) for m in metrics for q in quantities}
    maxima: Dict[ThresholdKey, float] = {}
    run_ids = set()
    for result in metric_results:
        key = (result.metric, result.quantity)
        if key not in wanted:
            continue
        run_ids.add(result.run_id)
        maxima[key] = max(maxima.get(key, 0.0), result.value)
    for metric, quantity in sorted(wanted, key=lambda k: (k[1].value, k[0].value)):
        if (metric, quantity) not in maxima:
            raise MissingThresholdError(metric.value, quantity.value)
    entries = {key: value * margin for key, value in maxima.items()}
    logger.info(f"Calibrated {len(entries)} thresholds on {len(run_ids)} runs (margin {margin})")
    return ThresholdTable(entries, tuple(sorted(run_ids)), margin)


def evaluate(
    results: Sequence[MetricResult],
    table: ThresholdTable,
    policy: VerdictPolicy = VerdictPolicy.ANY_BREACH,
    quantities: Optional[Sequence[Quantity]] = DEFAULT_QUANTITIES,
    run_id: Optional[int] = None,
    bus: Optional["EventBus"] = None,
) -> Verdict:
    """Compare a run's metrics with the thresholds and render a verdict.

    A breach is a value strictly above its threshold. Results for quantities outside
    `quantities` are ignored (None evaluates everything given).

    Raises:
        MissingThresholdError: An evaluated pair has no threshold
    """
    policy = VerdictPolicy.parse(policy)
    if run_id is None:
        if not results:
            raise DomainError("run_id", None, "run_id is required when there are no results")
        run_id = results[0].run_id
    selected = set(Quantity(q) for q in quantities) if quantities is not None else None
    evaluated = 0
    breaches: List[Breach] = []
    for result in results:
        if selected is not None and result.quantity not in selected:
            continue
        threshold = table.get(result.metric, result.quantity)
        evaluated += 1
        if result.value > threshold:
            breaches.append(Breach(result.metric, result.quantity, result.value, threshold))

    if policy is VerdictPolicy.MAJORITY_VOTE:
        invalid = 2 * len(breaches) > evaluated
    else:
        invalid = bool(breaches)
    verdict = Verdict(
        run_id,
        VerdictStatus.INVALID if invalid else VerdictStatus.VALID,
        tuple(breaches),
        policy,
        evaluated,
    )
    logger.info(f"Run {run_id}: {verdict.status.value} ({len(breaches)}/{evaluated} breaches, {policy.value})")
    if bus is not None:
        bus.publish("run.verdict", verdict.to_payload())
    return verdict


class WindowMode(str, Enum):
    PER_RUN = "per_run"
    TIME_BASED = "time_based"
    EVENT_BASED = "event_based"


def _upward_zero_crossing(values: np.ndarray) -> np.ndarray:
    return values > 0.0


def _downward_zero_crossing(values: np.ndarray) -> np.ndarray:
    return values < 0.0


# Each predicate maps samples to a condition; an experiment starts where it becomes true.
EVENT_PREDICATES: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "upward_zero_crossing": _upward_zero_crossing,
    "downward_zero_crossing": _downward_zero_crossing,
}


@dataclass(frozen=True)
class ExperimentWindow:
    mode: WindowMode = WindowMode.PER_RUN
    duration_s: Optional[float] = None
    predicate: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if self.mode is WindowMode.TIME_BASED:
            if self.duration_s is None or not math.isfinite(self.duration_s) or self.duration_s <= 0:
                raise DomainError("duration_s", self.duration_s, "Time-based windows need a duration > 0")
        if self.mode is WindowMode.EVENT_BASED and self.predicate not in EVENT_PREDICATES:
            raise DomainError(
                "predicate", self.predicate, f"Unknown event predicate; known: {sorted(EVENT_PREDICATES)}"
            )

    @classmethod
    def per_run(cls) -> "ExperimentWindow":
        return cls(WindowMode.PER_RUN)

    @classmethod
    def time_based(cls, duration_s: float) -> "ExperimentWindow":
        return cls(WindowMode.TIME_BASED, duration_s=duration_s)

    @classmethod
    def event_based(cls, predicate: str) -> "ExperimentWindow":
        return cls(WindowMode.EVENT_BASED, predicate=predicate)


@dataclass(frozen=True)
class Segment:
    """One experiment: a whole run, or a half-open slice [t_start, t_end) of a stream."""

    run_id: Optional[int] = None
    t_start_s: Optional[float] = None
    t_end_s: Optional[float] = None
    start_index: int = 0
    stop_index: int = 0

    def select(self, trace: Trace) -> Trace:
        return Trace(
            trace.run_id,
            trace.quantity,
            trace.kind,
            trace.t_s[self.start_index : self.stop_index],
            trace.values[self.start_index : self.stop_index],
            trace.replication,
        )


def delimit(stream: Union[Sequence, Trace], window: ExperimentWindow) -> List[Segment]:
    """Split an operational stream into validation experiments.

    per_run takes a sequence of run records (anything with a `run_id`); the other modes
    take a continuous Trace. Event-based segments run from one predicate onset to the
    next, so only complete segments are returned.
    """
    if window.mode is WindowMode.PER_RUN:
        return [Segment(run_id=record.run_id) for record in stream]

    if not isinstance(stream, Trace):
        raise DomainError("stream", type(stream).__name__, f"{window.mode.value} windows need a continuous Trace")
    if len(stream) == 0:
        return []
    t, values = stream.t_s, stream.values

    segments: List[Segment] = []
    if window.mode is WindowMode.TIME_BASED:
        d = float(window.duration_s)
        t0 = float(t[0])
        bins = np.floor((t - t0) / d).astype(np.int64)
        # A final sample exactly on a boundary closes the last window instead of opening one.
        last = max(int(np.ceil((float(t[-1]) - t0) / d - 1e-9)) - 1, 0)
        bins = np.minimum(bins, last)
        starts = np.flatnonzero(np.diff(bins, prepend=bins[0] - 1))
        stops = np.append(starts[1:], t.size)
        for a, b in zip(starts.tolist(), stops.tolist()):
            k = int(bins[a])
            segments.append(Segment(stream.run_id, t0 + k * d, t0 + (k + 1) * d, a, b))
        return segments

    condition = EVENT_PREDICATES[window.predicate](values)
    onsets = np.flatnonzero(condition[1:] & ~condition[:-1]) + 1
    for a, b in zip(onsets[:-1].tolist(), onsets[1:].tolist()):
        segments.append(Segment(stream.run_id, float(t[a]), float(t[b]), a, b))
    return segments
