"""Base study class for twinwatch."""

import logging
from abc import ABC, abstractmethod
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from runner.config import ScenarioConfig
from runner.report import StudyReport
from server.event_bus import EventBus
from store.records import RunRecord, RunStatus, start_time_for
from store.timeseries import TimeSeriesStore
from testbed.dynamics import horizon_samples, integrate
from testbed.enactment import Enactment, observe
from testbed.params import CraneParams, FaultSpec, PlantState
from testbed.trajectory import Trajectory, generate_trajectory
from twin.metrics import MetricResult, compute_all
from twin.traces import ReplicationSummary, resample

logger = logging.getLogger(__name__)

MACHINE_ID = 1


class BaseStudy(ABC):
    """Base class for the validation studies.

    Subclass this to add a study:

        class MyStudy(BaseStudy):
            name = "mystudy"
            description = "What the study shows"

            def run(self) -> StudyReport:
                ...

    Every run a study performs gets a row in the study's store, so each report row can
    list the run ids it aggregates.
    """

    def __init__(
        self,
        config: ScenarioConfig,
        store: Optional[TimeSeriesStore] = None,
        bus: Optional[EventBus] = None,
    ):
        self.config = config
        self.bus = bus or EventBus()
        self.store = store or TimeSeriesStore(config.output_dir / self.name / "store")
        self.store.ensure_machine(MACHINE_ID, "gantry-crane", "Simulated lab-scale gantry crane")
        self.store.ensure_quantities()

    @property
    @abstractmethod
    def name(self) -> str:
        """Study identifier (e.g., 'sensitivity')."""
        ...

    @property
    @abstractmethod
    def description(self) -> str:
        """Human-readable description for the CLI."""
        ...

    @abstractmethod
    def run(self) -> StudyReport:
        """Execute the study and return its report."""
        ...

    def get_info(self) -> Dict[str, Any]:
        return {"name": self.name, "description": self.description, "seed": self.config.seed}

    # Helpers shared by the studies

    def reference_trajectory(self, params: Optional[CraneParams] = None, run_id: int = 0) -> Trajectory:
        start_m, end_m = self.config.move
        return generate_trajectory(start_m, end_m, params or self.config.params, self.config.sample_period_s, run_id)

    def horizon(self, trajectory: Trajectory) -> int:
        return horizon_samples(trajectory, self.config.settle_tail_s)

    def plant_states(self, trajectory: Trajectory, plant: CraneParams) -> np.ndarray:
        """True plant states for `trajectory`, starting at rest; shared by every run of a condition."""
        cfg = self.config
        return integrate(
            PlantState.at_rest(trajectory.start_m),
            trajectory,
            plant,
            self.horizon(trajectory),
            cfg.dt_s,
            cfg.control_gain_per_s,
        )

    def new_run(self, fault: FaultSpec, v_max_used_mps: Optional[float] = None) -> int:
        record = RunRecord(
            machine_id=MACHINE_ID,
            start_time=start_time_for(len(self.store.list_runs())),
            fault=fault,
            status=RunStatus.VALIDATED,
            v_max_used_mps=self.config.params.v_max_mps if v_max_used_mps is None else v_max_used_mps,
            sample_period_s=self.config.sample_period_s,
        )
        return self.store.insert_run(record)

    def measure(self, run_id: int, trajectory: Trajectory, states: np.ndarray, plant: CraneParams) -> Enactment:
        enactment = observe(run_id, trajectory.with_run_id(run_id), states, plant, self.config.noise)
        self.bus.publish("run.measured_ready", {"run_id": run_id, "samples": enactment.n_samples})
        return enactment

    def metrics_against(self, summary: ReplicationSummary, enactment: Enactment) -> List[MetricResult]:
        """Metrics of one enactment against a shared twin summary, under the enactment's run id."""
        measured = resample(enactment.measured[summary.quantity], summary.t_s)
        return compute_all(replace(summary, run_id=enactment.run_id), measured, self.config.metrics)


def mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and sample standard deviation; None where undefined."""
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else None
    return float(np.mean(arr)), std
