"""How the metrics respond to a growing rope-length error."""

import logging
from typing import Dict, List

from runner.report import Figure, StudyReport, StudyRow
from testbed.params import FaultKind, FaultSpec, apply_fault
from twin.metrics import ALL_METRICS, MetricName, MetricResult
from twin.replication import ReplicationPlan, run_replications
from twin.validator import calibrate_thresholds

from .base import BaseStudy, mean_std

logger = logging.getLogger(__name__)


class SensitivityStudy(BaseStudy):
    """Rope-length fault sweep against one twin summary of one reference trajectory.

    Thresholds come from enactments of the nominal plant; each grid delta is enacted
    `runs_per_delta` times on the faulted plant and every metric is computed on one
    quantity (angular position by default).
    """

    name = "sensitivity"
    description = "Metric value versus rope-length error"

    def run(self) -> StudyReport:
        cfg = self.config
        settings = cfg.sensitivity
        quantity = settings.quantity

        trajectory = self.reference_trajectory()
        plan = ReplicationPlan.from_noise(0, cfg.noise, cfg.replications, cfg.omega_rule, cfg.sample_period_s)
        outcome = run_replications(
            trajectory,
            cfg.params,
            plan,
            n_samples=self.horizon(trajectory),
            settle_tail_s=cfg.settle_tail_s,
            dt_s=cfg.dt_s,
            control_gain=cfg.control_gain_per_s,
        )
        summary = outcome[quantity]

        nominal_states = self.plant_states(trajectory, cfg.params)
        nominal: List[MetricResult] = []
        nominal_ids: List[int] = []
        for _ in range(settings.nominal_runs):
            run_id = self.new_run(FaultSpec.none())
            results = self.metrics_against(summary, self.measure(run_id, trajectory, nominal_states, cfg.params))
            self.store.insert_metrics(results)
            nominal.extend(results)
            nominal_ids.append(run_id)
        observed = sorted({r.metric for r in nominal}, key=lambda m: ALL_METRICS.index(m))
        table = calibrate_thresholds(nominal, (quantity,), observed, cfg.margin)
        logger.info(f"Sensitivity: thresholds from {len(nominal_ids)} nominal runs on {quantity.value}")

        rows: List[StudyRow] = []
        curves: Dict[MetricName, List[List[float]]] = {m: [] for m in ALL_METRICS}
        for delta in settings.deltas:
            fault = FaultSpec(FaultKind.ROPE_LENGTH_ERROR, delta)
            plant = apply_fault(cfg.params, fault)
            states = self.plant_states(trajectory, plant)
            values: Dict[MetricName, List[float]] = {m: [] for m in ALL_METRICS}
            run_ids: List[int] = []
            for _ in range(settings.runs_per_delta):
                run_id = self.new_run(fault)
                results = self.metrics_against(summary, self.measure(run_id, trajectory, states, plant))
                self.store.insert_metrics(results)
                for r in results:
                    values[r.metric].append(r.value)
                run_ids.append(run_id)

            for metric in ALL_METRICS:
                threshold = table.entries.get((metric, quantity))
                mean, std = mean_std(values[metric])
                breaches = sum(v > threshold for v in values[metric]) if threshold is not None else None
                rows.append(
                    StudyRow(
                        condition=f"rope_length_error:{delta:+.4f}",
                        fault_kind=fault.kind.value,
                        delta=delta,
                        metric=metric.value,
                        quantity=quantity.value,
                        value=mean,
                        std=std,
                        breaches=breaches,
                        runs=len(values[metric]),
                        threshold=threshold,
                        run_ids=run_ids,
                    )
                )
                if mean is not None and threshold is not None:
                    curves[metric].append([100.0 * delta, mean, std or 0.0, threshold])
            logger.info(f"Sensitivity: delta {delta:+.4f} done ({len(run_ids)} runs)")

        figures = [
            Figure(
                name=f"sensitivity_{metric.value}",
                columns=["delta_percent", "mean", "std", "threshold"],
                rows=curve,
            )
            for metric, curve in curves.items()
            if curve
        ]
        return StudyReport(
            study=self.name,
            seed=cfg.seed,
            rows=rows,
            summary={
                "quantity": quantity.value,
                "reference_samples": len(summary.t_s),
                "replications": outcome.replications,
                "nominal_run_ids": nominal_ids,
                "thresholds": {m.value: v for (m, _), v in sorted(table.entries.items(), key=lambda kv: kv[0][0].value)},
            },
            figures=figures,
        )
