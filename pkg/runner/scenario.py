"""The continuous-validation loop.

Every run generates a trajectory from the twin's current parameters, enacts it on the
plant (nominal parameters plus the scheduled fault), simulates the twin R times from
the measured initial state, computes the validation metrics and renders a verdict. An
invalid run is followed by parameter estimation; a converged estimate becomes the
twin's parameters for every later run. Past runs are never re-validated.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from server.event_bus import BusError, EventBus, serialize_error
from store.errors import StoreError
from store.records import RunRecord, RunStatus, start_time_for
from store.timeseries import TimeSeriesStore
from testbed.enactment import Enactment, enact
from testbed.params import CraneParams, FaultSpec, apply_fault
from testbed.trajectory import Trajectory, generate_trajectory
from twin.errors import ValidationError
from twin.estimation import CostContext, EstimationProblem, EstimationResult, estimate_parameters
from twin.metrics import MetricResult, compute_all
from twin.replication import ReplicationOutcome, ReplicationPlan, run_replications
from twin.traces import resample
from twin.validator import ThresholdTable, Verdict, VerdictStatus, calibrate_thresholds, evaluate

from .config import ConfigError, ScenarioConfig
from .report import RunReport, ScenarioReport, metric_entries, threshold_map

logger = logging.getLogger(__name__)

MACHINE_ID = 1
MACHINE_NAME = "gantry-crane"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CONFIG = 3
EXIT_ABORTED = 4

# Errors that abort a single run; anything else is a defect and propagates.
RUN_ERRORS = (ValueError, ArithmeticError, ValidationError, StoreError, BusError)


@dataclass
class RunResult:
    """What happened in one run of the loop."""

    run_id: int
    index: int
    fault: FaultSpec
    twin_params: CraneParams
    status: RunStatus = RunStatus.PLANNED
    metrics: List[MetricResult] = field(default_factory=list)
    verdict: Optional[Verdict] = None
    estimation: Optional[EstimationResult] = None
    error: Optional[Dict] = None


@dataclass
class ScenarioResult:
    results: List[RunResult]
    thresholds: Optional[ThresholdTable]
    final_params: CraneParams
    exit_code: int = EXIT_OK

    def verdict_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for r in self.results:
            key = r.verdict.status.value if r.verdict else r.status.value
            counts[key] = counts.get(key, 0) + 1
        return counts

    def to_report(self, config: ScenarioConfig) -> ScenarioReport:
        runs = []
        for r in self.results:
            runs.append(
                RunReport(
                    run_id=r.run_id,
                    fault_kind=r.fault.kind.value,
                    fault_delta=r.fault.delta_fraction,
                    status=r.status.value,
                    verdict=r.verdict.status.value if r.verdict else None,
                    breaches=len(r.verdict.breaches) if r.verdict else 0,
                    evaluated=r.verdict.evaluated if r.verdict else 0,
                    twin_params=r.twin_params.to_dict(),
                    estimate=r.estimation.to_dict() if r.estimation else None,
                    error=r.error,
                    metrics=metric_entries(r.metrics, self.thresholds),
                )
            )
        return ScenarioReport(
            seed=config.seed,
            policy=config.policy.value,
            exit_code=self.exit_code,
            thresholds=threshold_map(self.thresholds),
            final_params=self.final_params.to_dict(),
            runs=runs,
        )


@dataclass(frozen=True, eq=False)
class RunEvidence:
    """Per-run artifacts kept in memory while the run is processed."""

    trajectory: Trajectory
    experiment: Trajectory
    enactment: Enactment
    outcome: ReplicationOutcome
    metrics: List[MetricResult]


def run_metrics(enactment: Enactment, outcome: ReplicationOutcome, config: ScenarioConfig) -> List[MetricResult]:
    """Resample the measurements onto the simulation grid and compute every metric."""
    results: List[MetricResult] = []
    for q in config.quantities:
        summary = outcome[q]
        measured = resample(enactment.measured[q], summary.t_s)
        results.extend(compute_all(summary, measured, config.metrics))
    return results


class ContinuousValidation:
    """Runs the validation loop against one store.

    The twin parameters evolve in place: `twin_params` always holds what the next run
    will be planned and simulated with.
    """

    def __init__(self, config: ScenarioConfig, store: TimeSeriesStore, bus: Optional[EventBus] = None):
        self.config = config
        self.store = store
        self.bus = bus or EventBus()
        self.twin_params = config.params
        self.thresholds = store.load_thresholds()
        store.ensure_machine(MACHINE_ID, MACHINE_NAME, "Simulated lab-scale gantry crane")
        store.ensure_quantities()

    def plant_params(self, fault: FaultSpec) -> CraneParams:
        return apply_fault(self.config.params, fault)

    def _set_status(self, result: RunResult, status: RunStatus) -> None:
        self.store.update_run_status(result.run_id, status)
        result.status = status

    def _execute(self, result: RunResult) -> RunEvidence:
        cfg, store = self.config, self.store
        start_m, end_m = cfg.move
        trajectory = generate_trajectory(start_m, end_m, self.twin_params, cfg.sample_period_s, result.run_id)
        self.bus.publish(
            "run.trajectory_ready",
            {"run_id": result.run_id, "samples": len(trajectory), "v_max_mps": trajectory.v_max_used_mps},
        )
        if cfg.store_traces:
            store.insert_trajectory(trajectory)

        enactment = enact(
            trajectory,
            self.plant_params(result.fault),
            cfg.noise,
            cfg.settle_tail_s,
            cfg.dt_s,
            cfg.control_gain_per_s,
            bus=self.bus,
        )
        if cfg.store_traces:
            for trace in enactment.measured.values():
                store.insert_trace(trace)
            store.insert_trace(enactment.commanded)
        self._set_status(result, RunStatus.ENACTED)

        experiment = trajectory
        if cfg.legacy:
            experiment = self._legacy_experiment(result.run_id, enactment)
        plan = ReplicationPlan.from_noise(
            result.run_id, cfg.noise, cfg.replications, cfg.omega_rule, cfg.sample_period_s
        )
        outcome = run_replications(
            experiment,
            self.twin_params,
            plan,
            enactment.measured_initial_state(),
            n_samples=enactment.n_samples,
            settle_tail_s=cfg.settle_tail_s,
            dt_s=cfg.dt_s,
            control_gain=cfg.control_gain_per_s,
            bus=self.bus,
        )
        store.insert_simulation(result.run_id, outcome.replications)
        if cfg.store_replications:
            store.insert_replications(outcome)
        self._set_status(result, RunStatus.SIMULATED)

        metrics = run_metrics(enactment, outcome, cfg)
        store.insert_metrics(metrics)
        result.metrics = metrics
        return RunEvidence(trajectory, experiment, enactment, outcome, metrics)

    def _legacy_experiment(self, run_id: int, enactment: Enactment) -> Trajectory:
        """Experiment input rebuilt from the logged commanded velocity."""
        if self.config.store_traces:
            return self.store.derive_trajectory(run_id)
        return Trajectory.from_commanded_velocity(
            run_id,
            enactment.commanded.values,
            float(enactment.measured_initial_state().x_m),
            float(np.max(np.abs(enactment.commanded.values))),
            self.config.sample_period_s,
        )

    def _recover(self, result: RunResult, evidence: RunEvidence) -> None:
        cfg = self.config
        problem = EstimationProblem(
            result.run_id,
            free_params=cfg.free_params,
            base_params=self.twin_params,
            policy=cfg.recovery_policy,
        )
        if cfg.store_traces:
            context = CostContext.from_store(self.store, result.run_id, cfg.legacy, cfg.dt_s, cfg.control_gain_per_s)
        else:
            context = CostContext.from_traces(
                evidence.experiment, evidence.enactment.measured, cfg.dt_s, cfg.control_gain_per_s
            )
        estimation = estimate_parameters(result.run_id, problem, context=context, bus=self.bus)
        result.estimation = estimation
        if estimation.converged and estimation.is_estimate:
            old = self.twin_params
            self.twin_params = estimation.updated_params(self.twin_params)
            logger.info(f"Run {result.run_id}: twin updated {old.to_dict()} -> {self.twin_params.to_dict()}")
            self._set_status(result, RunStatus.RECALIBRATED)
        else:
            assert result.verdict is not None
            result.verdict = result.verdict.with_status(VerdictStatus.NEEDS_MODEL_REVISION)
            logger.warning(f"Run {result.run_id}: no usable estimate; the twin model needs revision")

    def _judge(self, result: RunResult, evidence: Optional[RunEvidence]) -> None:
        assert self.thresholds is not None
        result.verdict = evaluate(
            result.metrics, self.thresholds, self.config.policy, self.config.quantities, result.run_id, self.bus
        )
        if result.verdict.status is VerdictStatus.INVALID and evidence is not None:
            self._recover(result, evidence)
        self.store.insert_verdict(result.verdict)
        if result.status is not RunStatus.RECALIBRATED:
            self._set_status(result, RunStatus.VALIDATED)

    def _calibrate(self, pending: List[RunResult]) -> None:
        runs = [r for r in pending if r.status is not RunStatus.ABORTED]
        metrics = [m for r in runs for m in r.metrics]
        self.thresholds = calibrate_thresholds(metrics, self.config.quantities, margin=self.config.margin)
        self.store.save_thresholds(self.thresholds)
        for r in runs:
            self._judge(r, None)

    def process(self, index: int, fault: Optional[FaultSpec] = None) -> RunResult:
        """Plan, enact, simulate and (when thresholds exist) judge the index-th run.

        `fault` overrides the scheduled fault.
        """
        fault = fault if fault is not None else self.config.fault_for(index)
        existing = len(self.store.list_runs())
        record = RunRecord(
            machine_id=MACHINE_ID,
            start_time=start_time_for(existing),
            fault=fault,
            status=RunStatus.PLANNED,
            v_max_used_mps=self.twin_params.v_max_mps,
            sample_period_s=self.config.sample_period_s,
        )
        run_id = self.store.insert_run(record)
        result = RunResult(run_id, index, fault, self.twin_params)
        try:
            evidence = self._execute(result)
            if self.thresholds is not None:
                self._judge(result, evidence)
        except RUN_ERRORS as e:
            result.error = serialize_error(e)
            logger.warning(f"Run {run_id} aborted: {result.error['type']}: {result.error['message']}")
            try:
                self._set_status(result, RunStatus.ABORTED)
            except StoreError as store_error:
                logger.error(f"Run {run_id}: could not record the abort: {store_error}")
                result.status = RunStatus.ABORTED
        return result

    def run(self) -> ScenarioResult:
        """Execute every configured run in order."""
        cfg = self.config
        if self.thresholds is None and cfg.calibration_runs == 0:
            raise ConfigError(
                "calibration_runs",
                "The store has no thresholds and no calibration runs are configured",
                "Run 'twinwatch calibrate' first or set calibration_runs",
            )
        logger.info(
            f"Scenario: {cfg.runs} runs, {cfg.replications} replications, policy {cfg.policy.value}, "
            f"seed {cfg.seed}, store {self.store.root}"
        )
        results: List[RunResult] = []
        pending: List[RunResult] = []
        for index in range(1, cfg.runs + 1):
            result = self.process(index)
            results.append(result)
            if self.thresholds is None:
                pending.append(result)
                if len(pending) == min(cfg.calibration_runs, cfg.runs):
                    self._calibrate_or_abort(pending)
        return ScenarioResult(results, self.thresholds, self.twin_params, self.exit_code(results))

    def _calibrate_or_abort(self, pending: List[RunResult]) -> None:
        try:
            self._calibrate(pending)
        except RUN_ERRORS as e:
            error = serialize_error(e)
            logger.error(f"Calibration failed: {error['message']}")
            for r in pending:
                if r.status is not RunStatus.ABORTED:
                    r.error = error
                    self._set_status(r, RunStatus.ABORTED)

    def calibrate(self, runs: Optional[int] = None) -> ThresholdTable:
        """Run `runs` fault-free runs and set the thresholds from them alone.

        Raises:
            MissingThresholdError: Every calibration run aborted
        """
        count = runs if runs is not None else self.config.calibration_runs
        if count < 1:
            raise ConfigError("calibration_runs", "At least one calibration run is required")
        self.thresholds = None
        pending = []
        for index in range(1, count + 1):
            pending.append(self.process(index, FaultSpec.none()))
        self._calibrate(pending)
        assert self.thresholds is not None
        return self.thresholds

    @staticmethod
    def exit_code(results: List[RunResult]) -> int:
        if any(r.status is RunStatus.ABORTED for r in results):
            return EXIT_ABORTED
        unresolved = (VerdictStatus.INVALID, VerdictStatus.NEEDS_MODEL_REVISION)
        if any(r.verdict is not None and r.verdict.status in unresolved and r.status is not RunStatus.RECALIBRATED for r in results):
            return EXIT_INVALID
        return EXIT_OK


def run_scenario(config: ScenarioConfig, store: Optional[TimeSeriesStore] = None, bus: Optional[EventBus] = None) -> ScenarioResult:
    """Run the whole loop described by `config` against its store."""
    store = store or TimeSeriesStore(config.resolved_store_dir)
    return ContinuousValidation(config, store, bus).run()
