"""Recovering a velocity deficit under the different initial-guess policies."""

import logging
from typing import Dict, List

import numpy as np

from runner.report import Figure, StudyReport, StudyRow
from testbed.params import FaultKind, FaultSpec, apply_fault
from twin.estimation import CostContext, EstimationProblem, EstimationResult, estimate_parameters

from .base import BaseStudy, mean_std

logger = logging.getLogger(__name__)


class EstimationStudy(BaseStudy):
    """Estimate v_max on every divergent run with each configured policy.

    The truth is known: the plant runs at v_max / (1 + delta).
    """

    name = "estimation"
    description = "v_max estimates and their error per initial-guess policy"

    def run(self) -> StudyReport:
        cfg = self.config
        settings = cfg.estimation
        fault = FaultSpec(FaultKind.VELOCITY_DEFICIT, settings.delta_fraction)
        plant = apply_fault(cfg.params, fault)
        truth = plant.v_max_mps

        trajectory = self.reference_trajectory()
        states = self.plant_states(trajectory, plant)
        estimates: Dict[str, List[EstimationResult]] = {p.label: [] for p in settings.policies}
        run_ids: List[int] = []
        for i in range(settings.runs):
            run_id = self.new_run(fault)
            enactment = self.measure(run_id, trajectory, states, plant)
            context = CostContext.from_traces(
                trajectory.with_run_id(run_id), enactment.measured, cfg.dt_s, cfg.control_gain_per_s
            )
            for policy in settings.policies:
                problem = EstimationProblem(run_id, ("v_max_mps",), base_params=cfg.params, policy=policy)
                estimates[policy.label].append(estimate_parameters(run_id, problem, context=context))
            run_ids.append(run_id)
            logger.info(f"Estimation: run {i + 1}/{settings.runs} done")

        rows: List[StudyRow] = []
        summary: Dict[str, Dict] = {}
        everything = [r.estimate["v_max_mps"] for results in estimates.values() for r in results]
        edges = np.histogram_bin_edges(everything, bins=settings.bins) if everything else np.array([])
        figures: List[Figure] = []
        for policy in settings.policies:
            results = estimates[policy.label]
            values = [r.estimate["v_max_mps"] for r in results]
            mean, std = mean_std(values)
            errors = (np.asarray(values) - truth) / truth
            rows.append(
                StudyRow(
                    condition=policy.label,
                    fault_kind=fault.kind.value,
                    delta=fault.delta_fraction,
                    metric="v_max_mps",
                    quantity="velocity",
                    value=mean,
                    std=std,
                    runs=len(values),
                    error_fraction=(mean - truth) / truth if mean is not None else None,
                    run_ids=run_ids,
                )
            )
            summary[policy.label] = {
                "mean": mean,
                "std": std,
                "signed_error": (mean - truth) if mean is not None else None,
                "rms_error_fraction": float(np.sqrt(np.mean(errors**2))) if values else None,
                "max_abs_error_fraction": float(np.max(np.abs(errors))) if values else None,
                "converged": sum(r.converged for r in results),
                "is_estimate": all(r.is_estimate for r in results),
                "mean_iterations": float(np.mean([r.iterations for r in results])) if results else None,
            }
            if edges.size:
                counts, _ = np.histogram(values, bins=edges)
                figures.append(
                    Figure(
                        name="estimation_hist_" + policy.label.replace("(", "_").rstrip(")"),
                        columns=["bin_left", "bin_right", "count"],
                        rows=[[float(lo), float(hi), float(c)] for lo, hi, c in zip(edges[:-1], edges[1:], counts)],
                    )
                )

        return StudyReport(
            study=self.name,
            seed=cfg.seed,
            rows=rows,
            summary={"true_v_max_mps": truth, "reference_peak_mps": trajectory.peak_velocity_mps, "policies": summary},
            figures=figures,
        )
