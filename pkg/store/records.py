"""Run metadata rows."""

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Dict, Optional

from testbed.params import FaultKind, FaultSpec

DEFAULT_EPOCH = "2024-01-01T00:00:00+00:00"


class RunStatus(str, Enum):
    PLANNED = "planned"
    ENACTED = "enacted"
    SIMULATED = "simulated"
    VALIDATED = "validated"
    RECALIBRATED = "recalibrated"
    ABORTED = "aborted"


def start_time_for(index: int, epoch: str = DEFAULT_EPOCH, spacing_s: float = 60.0) -> str:
    """Absolute start time of the index-th run; derived, never read from the clock."""
    base = datetime.fromisoformat(epoch)
    if base.tzinfo is None:
        base = base.replace(tzinfo=timezone.utc)
    return (base + timedelta(seconds=spacing_s * index)).isoformat()


@dataclass(frozen=True)
class RunRecord:
    """One routine operation. Sample timestamps of the run are relative to `start_time`."""

    run_id: Optional[int] = None
    machine_id: int = 1
    start_time: str = DEFAULT_EPOCH
    fault: FaultSpec = field(default_factory=FaultSpec.none)
    status: RunStatus = RunStatus.PLANNED
    v_max_used_mps: float = float("nan")
    sample_period_s: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "status", RunStatus(self.status))

    def with_status(self, status: RunStatus) -> "RunRecord":
        return replace(self, status=RunStatus(status))

    def with_run_id(self, run_id: int) -> "RunRecord":
        return replace(self, run_id=run_id)

    def to_row(self) -> Dict[str, str]:
        return {
            "run_id": str(self.run_id),
            "machine_id": str(self.machine_id),
            "start_time": self.start_time,
            "fault_kind": self.fault.kind.value,
            "fault_delta": repr(float(self.fault.delta_fraction)),
            "status": self.status.value,
            "v_max_used_mps": repr(float(self.v_max_used_mps)),
            "sample_period_s": repr(float(self.sample_period_s)),
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "RunRecord":
        v_max = float(row["v_max_used_mps"])
        return cls(
            run_id=int(row["run_id"]),
            machine_id=int(row["machine_id"]),
            start_time=row["start_time"],
            fault=FaultSpec(FaultKind(row["fault_kind"]), float(row["fault_delta"])),
            status=RunStatus(row["status"]),
            v_max_used_mps=v_max if math.isfinite(v_max) else float("nan"),
            sample_period_s=float(row["sample_period_s"]),
        )

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "machine_id": self.machine_id,
            "start_time": self.start_time,
            "fault": self.fault.to_dict(),
            "status": self.status.value,
            "v_max_used_mps": self.v_max_used_mps if math.isfinite(self.v_max_used_mps) else None,
            "sample_period_s": self.sample_period_s,
        }
