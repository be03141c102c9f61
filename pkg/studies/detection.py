"""Which metrics catch a velocity deficit, and from what size on."""

import logging
from typing import Dict, List, Tuple

from runner.report import Figure, StudyReport, StudyRow
from runner.scenario import run_metrics
from testbed.params import FaultKind, FaultSpec, apply_fault
from twin.metrics import ALL_METRICS, MetricName, MetricResult
from twin.replication import ReplicationPlan, run_replications
from twin.validator import VerdictStatus, calibrate_thresholds, evaluate

from .base import BaseStudy, mean_std

logger = logging.getLogger(__name__)

Cell = Tuple[MetricName, str]


class DetectionStudy(BaseStudy):
    """Thresholds from normal runs, then breach counts per velocity-deficit level.

    Each run goes through the full pipeline: the twin is replicated from the run's own
    measured initial state.
    """

    name = "detection"
    description = "Breach counts per (metric, quantity) versus velocity deficit"

    def _run_condition(self, fault: FaultSpec, runs: int) -> Tuple[List[int], List[List[MetricResult]]]:
        cfg = self.config
        trajectory = self.reference_trajectory()
        plant = apply_fault(cfg.params, fault)
        states = self.plant_states(trajectory, plant)
        run_ids: List[int] = []
        per_run: List[List[MetricResult]] = []
        for _ in range(runs):
            run_id = self.new_run(fault)
            enactment = self.measure(run_id, trajectory, states, plant)
            plan = ReplicationPlan.from_noise(run_id, cfg.noise, cfg.replications, cfg.omega_rule, cfg.sample_period_s)
            outcome = run_replications(
                trajectory.with_run_id(run_id),
                cfg.params,
                plan,
                enactment.measured_initial_state(),
                n_samples=enactment.n_samples,
                settle_tail_s=cfg.settle_tail_s,
                dt_s=cfg.dt_s,
                control_gain=cfg.control_gain_per_s,
                bus=self.bus,
            )
            results = run_metrics(enactment, outcome, cfg)
            self.store.insert_metrics(results)
            run_ids.append(run_id)
            per_run.append(results)
        return run_ids, per_run

    def run(self) -> StudyReport:
        cfg = self.config
        settings = cfg.detection
        quantities = cfg.quantities

        conditions = [FaultSpec.none()] + [FaultSpec(FaultKind.VELOCITY_DEFICIT, d) for d in settings.deltas]
        counts = [settings.normal_runs] + [settings.runs_per_delta] * len(settings.deltas)
        outcomes = []
        for fault, runs in zip(conditions, counts):
            outcomes.append(self._run_condition(fault, runs))
            logger.info(f"Detection: {fault.kind.value} {fault.delta_fraction:+.2f} done ({runs} runs)")

        normal = [r for results in outcomes[0][1] for r in results]
        table = calibrate_thresholds(normal, quantities, margin=cfg.margin)

        rows: List[StudyRow] = []
        invalid_counts: Dict[str, int] = {}
        rates: Dict[str, List[List[float]]] = {q.value: [] for q in quantities}
        for fault, (run_ids, per_run) in zip(conditions, outcomes):
            label = "normal" if fault.kind is FaultKind.NONE else f"velocity_deficit:{fault.delta_fraction:.2f}"
            values: Dict[Cell, List[float]] = {}
            breaches: Dict[Cell, int] = {}
            invalid = 0
            for results in per_run:
                verdict = evaluate(results, table, cfg.policy, quantities, bus=self.bus)
                invalid += verdict.status is VerdictStatus.INVALID
                for r in results:
                    key = (r.metric, r.quantity.value)
                    values.setdefault(key, []).append(r.value)
                    breaches[key] = breaches.get(key, 0) + (r.value > table.get(r.metric, r.quantity))
            invalid_counts[label] = invalid

            for q in quantities:
                rate_row = [100.0 * fault.delta_fraction]
                for metric in ALL_METRICS:
                    key = (metric, q.value)
                    mean, std = mean_std(values.get(key, []))
                    rows.append(
                        StudyRow(
                            condition=label,
                            fault_kind=fault.kind.value,
                            delta=fault.delta_fraction,
                            metric=metric.value,
                            quantity=q.value,
                            value=mean,
                            std=std,
                            breaches=breaches.get(key, 0),
                            runs=len(run_ids),
                            threshold=table.entries.get((metric, q)),
                            run_ids=run_ids,
                        )
                    )
                    rate_row.append(breaches.get(key, 0) / len(run_ids) if run_ids else 0.0)
                rates[q.value].append(rate_row)

        figures = [
            Figure(
                name=f"detection_{q}",
                columns=["delta_percent"] + [f"{m.value}_breach_rate" for m in ALL_METRICS],
                rows=rate_rows,
            )
            for q, rate_rows in rates.items()
        ]
        return StudyReport(
            study=self.name,
            seed=cfg.seed,
            rows=rows,
            summary={
                "policy": cfg.policy.value,
                "invalid_runs": invalid_counts,
                "calibration_run_ids": list(table.calibration_run_ids),
                "replications": cfg.replications,
            },
            figures=figures,
        )
