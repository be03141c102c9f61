"""Validation metrics comparing one measured realization with replicated predictions.

Distances are computed on aligned samples. The normalized metrics exclude samples whose
prediction spread (or prediction mean, for the relative errors) is too close to zero to
divide by; an excluded sample never contributes to a value, and a metric with no
included samples is degenerate and reported as absent.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AlignmentError, DegenerateDataError
from .traces import Quantity, ReplicationSummary, Trace

logger = logging.getLogger(__name__)


class MetricName(str, Enum):
    RMSE = "rmse"
    MEAN_NED = "mean_ned"
    TOTAL_NED = "total_ned"
    AVG_REL_ERR = "avg_rel_err"
    MAX_REL_ERR = "max_rel_err"


ALL_METRICS: Tuple[MetricName, ...] = tuple(MetricName)


@dataclass(frozen=True)
class MetricConfig:
    """Exclusion thresholds, in the units of the compared quantity."""

    eps_sigma: float = 1e-6
    eps_mean: float = 1e-6
    eps_sigma_by_quantity: Dict[str, float] = field(default_factory=dict)
    eps_mean_by_quantity: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        values = [("eps_sigma", self.eps_sigma), ("eps_mean", self.eps_mean)]
        values += [(f"eps_sigma_by_quantity.{q}", v) for q, v in self.eps_sigma_by_quantity.items()]
        values += [(f"eps_mean_by_quantity.{q}", v) for q, v in self.eps_mean_by_quantity.items()]
        for name, value in values:
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"MetricConfig.{name} must be > 0, got {value!r}")
        for mapping in (self.eps_sigma_by_quantity, self.eps_mean_by_quantity):
            for q in mapping:
                Quantity(q)

    def sigma_threshold(self, quantity: Optional[Quantity] = None) -> float:
        if quantity is None:
            return self.eps_sigma
        return self.eps_sigma_by_quantity.get(Quantity(quantity).value, self.eps_sigma)

    def mean_threshold(self, quantity: Optional[Quantity] = None) -> float:
        if quantity is None:
            return self.eps_mean
        return self.eps_mean_by_quantity.get(Quantity(quantity).value, self.eps_mean)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricResult:
    run_id: int
    quantity: Quantity
    metric: MetricName
    value: float
    included: int
    excluded: int = 0

    def __post_init__(self):
        object.__setattr__(self, "quantity", Quantity(self.quantity))
        object.__setattr__(self, "metric", MetricName(self.metric))
        if not math.isfinite(self.value) or self.value < 0:
            raise DegenerateDataError(self.metric.value, f"value {self.value!r} is not a finite non-negative number")
        if self.included < 1 or self.excluded < 0:
            raise DegenerateDataError(self.metric.value, "no included samples")

    @property
    def key(self) -> Tuple[int, Quantity, MetricName]:
        return (self.run_id, self.quantity, self.metric)

    @property
    def samples(self) -> int:
        return self.included + self.excluded

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "quantity": self.quantity.value,
            "metric": self.metric.value,
            "value": self.value,
            "included": self.included,
            "excluded": self.excluded,
        }


def _pair(pred_mean: Sequence[float], measured: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred_mean, dtype=float)
    d = np.asarray(measured, dtype=float)
    if p.ndim != 1 or p.shape != d.shape:
        raise AlignmentError(
            f"Prediction and measurement lengths differ: {p.shape} vs {d.shape}",
            expected=p.size,
            actual=d.size,
        )
    if p.size == 0:
        raise DegenerateDataError("metrics", "empty series")
    return p, d


def rmse(
    pred_mean: Sequence[float],
    measured: Sequence[float],
    run_id: int = 0,
    quantity: Quantity = Quantity.POSITION,
) -> MetricResult:
    """Root mean squared error; keeps the quantity's unit and excludes nothing."""
    p, d = _pair(pred_mean, measured)
    value = math.sqrt(float(np.mean((p - d) ** 2)))
    return MetricResult(run_id, quantity, MetricName.RMSE, value, int(p.size), 0)


def ned_pointwise(
    pred_mean: Sequence[float],
    pred_std: Optional[Sequence[float]],
    measured: Sequence[float],
    cfg: MetricConfig = MetricConfig(),
    quantity: Optional[Quantity] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample normalized distance |P - D| / sigma.

    Returns (d, mask): `mask` is True where the sample is included (sigma >= eps_sigma);
    `d` is NaN wherever the sample is excluded.

    Raises:
        DegenerateDataError: No spread is available or every sample is excluded
    """
    if pred_std is None:
        raise DegenerateDataError("ned", "sample standard deviation needs at least 2 replications")
    p, d = _pair(pred_mean, measured)
    s = np.asarray(pred_std, dtype=float)
    if s.shape != p.shape:
        raise AlignmentError("Standard deviation length differs from the mean", expected=p.size, actual=s.size)
    mask = s >= cfg.sigma_threshold(quantity)
    if not mask.any():
        raise DegenerateDataError("ned", f"all {p.size} samples excluded (sigma below eps_sigma)")
    distances = np.full(p.shape, np.nan)
    distances[mask] = np.abs(p[mask] - d[mask]) / s[mask]
    return distances, mask


def _included(d_i: Sequence[float], mask: Optional[Sequence[bool]], metric: MetricName) -> Tuple[np.ndarray, int]:
    d = np.asarray(d_i, dtype=float)
    m = np.ones(d.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != d.shape:
        raise AlignmentError("Exclusion mask length differs from the distances", expected=d.size, actual=m.size)
    kept = d[m]
    if kept.size == 0:
        raise DegenerateDataError(metric.value, "all samples excluded")
    return kept, int(d.size - kept.size)


def mean_ned(
    d_i: Sequence[float],
    mask: Optional[Sequence[bool]] = None,
    run_id: int = 0,
    quantity: Quantity = Quantity.POSITION,
) -> MetricResult:
    kept, excluded = _included(d_i, mask, MetricName.MEAN_NED)
    return MetricResult(run_id, quantity, MetricName.MEAN_NED, float(np.mean(kept)), int(kept.size), excluded)


def total_ned(
    d_i: Sequence[float],
    mask: Optional[Sequence[bool]] = None,
    run_id: int = 0,
    quantity: Quantity = Quantity.POSITION,
) -> MetricResult:
    """Total normalized distance sqrt(sum(d^2) / N_included)."""
    kept, excluded = _included(d_i, mask, MetricName.TOTAL_NED)
    value = math.sqrt(float(np.sum(kept**2)) / kept.size)
    return MetricResult(run_id, quantity, MetricName.TOTAL_NED, value, int(kept.size), excluded)


def _relative_errors(
    p: np.ndarray, d: np.ndarray, cfg: MetricConfig, quantity: Optional[Quantity], metric: MetricName
) -> Tuple[np.ndarray, int]:
    mask = np.abs(p) >= cfg.mean_threshold(quantity)
    if not mask.any():
        raise DegenerateDataError(metric.value, f"all {p.size} samples excluded (|mean| below eps_mean)")
    ratios = np.abs(d[mask] - p[mask]) / np.abs(p[mask])
    return ratios, int(p.size - ratios.size)


def avg_rel_err(
    pred_mean: Sequence[float],
    measured: Sequence[float],
    times: Optional[Sequence[float]] = None,
    cfg: MetricConfig = MetricConfig(),
    run_id: int = 0,
    quantity: Quantity = Quantity.POSITION,
) -> MetricResult:
    """Average relative error over included samples.

    The integral over the run is discretized with the rectangle rule, which on a uniform
    grid is the mean of the pointwise ratios.

    Raises:
        AlignmentError: `times` is not uniformly spaced
        DegenerateDataError: Every sample is excluded
    """
    p, d = _pair(pred_mean, measured)
    if times is not None:
        t = np.asarray(times, dtype=float)
        if t.shape != p.shape:
            raise AlignmentError("Time grid length differs from the series", expected=p.size, actual=t.size)
        if t.size > 2:
            steps = np.diff(t)
            if np.max(steps) - np.min(steps) > 1e-9 * max(1.0, float(np.max(np.abs(t)))):
                raise AlignmentError("Average relative error needs a uniform time grid")
    ratios, excluded = _relative_errors(p, d, cfg, quantity, MetricName.AVG_REL_ERR)
    return MetricResult(run_id, quantity, MetricName.AVG_REL_ERR, float(np.mean(ratios)), int(ratios.size), excluded)


def max_rel_err(
    pred_mean: Sequence[float],
    measured: Sequence[float],
    cfg: MetricConfig = MetricConfig(),
    run_id: int = 0,
    quantity: Quantity = Quantity.POSITION,
) -> MetricResult:
    p, d = _pair(pred_mean, measured)
    ratios, excluded = _relative_errors(p, d, cfg, quantity, MetricName.MAX_REL_ERR)
    return MetricResult(run_id, quantity, MetricName.MAX_REL_ERR, float(np.max(ratios)), int(ratios.size), excluded)


def compute_all(
    summary: ReplicationSummary,
    measured: Trace,
    cfg: MetricConfig = MetricConfig(),
    metrics: Sequence[MetricName] = ALL_METRICS,
) -> List[MetricResult]:
    """Compute every requested metric for one quantity of one run.

    A degenerate metric is logged and left out of the result; the others are unaffected.

    Raises:
        AlignmentError: `measured` is not on the summary's time grid
    """
    if measured.quantity != summary.quantity:
        raise AlignmentError(f"Comparing {measured.quantity.value} against a {summary.quantity.value} summary")
    if measured.t_s.shape != summary.t_s.shape or not np.allclose(measured.t_s, summary.t_s, rtol=0.0, atol=1e-9):
        raise AlignmentError(
            "Measured trace must be resampled onto the simulation grid first",
            expected=summary.t_s.size,
            actual=measured.t_s.size,
        )
    run_id, q = summary.run_id, summary.quantity
    p, d = summary.mean, measured.values
    wanted = [MetricName(m) for m in metrics]
    results: List[MetricResult] = []

    d_i: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    ned_error: Optional[DegenerateDataError] = None
    if MetricName.MEAN_NED in wanted or MetricName.TOTAL_NED in wanted:
        try:
            d_i, mask = ned_pointwise(p, summary.std, d, cfg, q)
        except DegenerateDataError as e:
            ned_error = e

    for metric in wanted:
        try:
            if metric is MetricName.RMSE:
                results.append(rmse(p, d, run_id, q))
            elif metric in (MetricName.MEAN_NED, MetricName.TOTAL_NED):
                if ned_error is not None:
                    raise ned_error
                reduce = mean_ned if metric is MetricName.MEAN_NED else total_ned
                results.append(reduce(d_i, mask, run_id, q))
            elif metric is MetricName.AVG_REL_ERR:
                results.append(avg_rel_err(p, d, summary.t_s, cfg, run_id, q))
            else:
                results.append(max_rel_err(p, d, cfg, run_id, q))
        except DegenerateDataError as e:
            logger.warning(f"Run {run_id} {q.value}: {metric.value} is degenerate and left absent ({e})")
    return results
