"""Tests for the validation metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twin.errors import AlignmentError, DegenerateDataError
from twin.metrics import (
    ALL_METRICS,
    MetricConfig,
    MetricName,
    MetricResult,
    avg_rel_err,
    compute_all,
    max_rel_err,
    mean_ned,
    ned_pointwise,
    rmse,
    total_ned,
)
from twin.traces import Quantity, ReplicationSummary, Trace, TraceKind

# Millesimal grid: keeps squares clear of underflow.
finite = st.integers(min_value=-1_000_000, max_value=1_000_000).map(lambda i: i / 1000.0)


def paired():
    return st.integers(min_value=1, max_value=40).flatmap(
        lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n), st.lists(finite, min_size=n, max_size=n))
    )


def summary_and_trace(mean, std, measured, quantity=Quantity.POSITION):
    t = np.arange(len(mean)) * 0.01
    spread = None if std is None else np.asarray(std, float)
    summary = ReplicationSummary(1, quantity, t, np.asarray(mean, float), spread, 5)
    return summary, Trace(1, quantity, TraceKind.MEASURED, t, measured)


def oracle(p, s, d, eps_sigma, eps_mean):
    """Loop-by-loop reference values for all five metrics."""
    n = len(p)
    sq = 0.0
    for pi, di in zip(p, d):
        sq += (pi - di) ** 2
    out = {"rmse": math.sqrt(sq / n)}
    dists = [abs(pi - di) / si for pi, si, di in zip(p, s, d) if si >= eps_sigma]
    if dists:
        out["mean_ned"] = sum(dists) / len(dists)
        out["total_ned"] = math.sqrt(sum(x * x for x in dists) / len(dists))
    ratios = [abs(di - pi) / abs(pi) for pi, di in zip(p, d) if abs(pi) >= eps_mean]
    if ratios:
        out["avg_rel_err"] = sum(ratios) / len(ratios)
        out["max_rel_err"] = max(ratios)
    return out


class TestWorkedExamples:
    """Hand-computed metric values."""

    def test_rmse(self):
        """A constant offset of one gives an RMSE of one."""
        result = rmse([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
        assert result.value == pytest.approx(1.0)
        assert result.included == 3
        assert result.excluded == 0

    def test_total_ned(self):
        """sqrt((9 + 16) / 2)."""
        assert total_ned([3.0, 4.0]).value == pytest.approx(math.sqrt(12.5))

    def test_mean_ned(self):
        """Plain average of the distances."""
        assert mean_ned([3.0, 4.0]).value == pytest.approx(3.5)

    def test_ned_pointwise(self):
        """Distances divide by the spread."""
        d, mask = ned_pointwise([1.0, 2.0], [0.5, 2.0], [2.0, 0.0])
        assert d.tolist() == [2.0, 1.0]
        assert mask.all()

    def test_relative_errors(self):
        """Average and maximum of |D - P| / |P|."""
        assert avg_rel_err([2.0, 4.0], [3.0, 5.0]).value == pytest.approx(0.375)
        assert max_rel_err([2.0, 4.0], [3.0, 5.0]).value == pytest.approx(0.5)


class TestExclusion:
    """Samples with too little spread or mean are left out."""

    def test_ned_excludes_small_sigma(self):
        """Excluded samples are NaN and counted."""
        cfg = MetricConfig(eps_sigma=0.1)
        d, mask = ned_pointwise([0.0, 0.0, 0.0], [1.0, 0.01, 2.0], [1.0, 5.0, 1.0], cfg)
        assert mask.tolist() == [True, False, True]
        assert math.isnan(d[1])
        result = mean_ned(d, mask)
        assert result.value == pytest.approx(0.75)
        assert (result.included, result.excluded) == (2, 1)

    def test_all_excluded_is_degenerate(self):
        """No usable sample means no value."""
        with pytest.raises(DegenerateDataError):
            ned_pointwise([0.0, 0.0], [0.0, 0.0], [1.0, 1.0])

    def test_relative_error_excludes_small_mean(self):
        """Samples with |P| < eps_mean never divide."""
        cfg = MetricConfig(eps_mean=0.5)
        result = max_rel_err([0.0, 1.0, 0.1], [10.0, 1.5, 7.0], cfg)
        assert result.value == pytest.approx(0.5)
        assert (result.included, result.excluded) == (1, 2)

    def test_relative_error_all_excluded(self):
        """A zero prediction everywhere is degenerate."""
        with pytest.raises(DegenerateDataError):
            avg_rel_err([0.0, 0.0], [1.0, 1.0])

    def test_quantity_specific_threshold(self):
        """Per-quantity thresholds override the global one."""
        cfg = MetricConfig(eps_mean_by_quantity={"velocity": 0.5})
        assert cfg.mean_threshold(Quantity.VELOCITY) == 0.5
        assert cfg.mean_threshold(Quantity.POSITION) == cfg.eps_mean
        result = avg_rel_err([0.1, 1.0], [0.2, 1.1], cfg=cfg, quantity=Quantity.VELOCITY)
        assert result.excluded == 1

    def test_missing_spread(self):
        """A single replication has no spread for the NED."""
        with pytest.raises(DegenerateDataError):
            ned_pointwise([1.0], None, [1.0])


class TestInputChecks:
    """Malformed inputs."""

    def test_length_mismatch(self):
        """Series of different lengths cannot be compared."""
        with pytest.raises(AlignmentError):
            rmse([1.0, 2.0], [1.0])

    def test_empty(self):
        """Empty series are degenerate."""
        with pytest.raises(DegenerateDataError):
            rmse([], [])

    def test_non_uniform_grid(self):
        """The average relative error needs a uniform grid."""
        with pytest.raises(AlignmentError):
            avg_rel_err([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], times=[0.0, 0.01, 0.03])

    def test_bad_config(self):
        """Thresholds must be positive."""
        with pytest.raises(ValueError):
            MetricConfig(eps_sigma=0.0)
        with pytest.raises(ValueError):
            MetricConfig(eps_mean_by_quantity={"torque": 0.1})

    def test_result_rejects_negative(self):
        """A metric value is never negative."""
        with pytest.raises(DegenerateDataError):
            MetricResult(1, Quantity.POSITION, MetricName.RMSE, -1.0, 3)


class TestComputeAll:
    """Tests for compute_all()."""

    def test_matches_oracle_on_random_pairs(self):
        """Vectorized metrics agree with loop-by-loop sums."""
        rng = np.random.default_rng(20)
        cfg = MetricConfig(eps_sigma=0.05, eps_mean=0.05)
        for _ in range(20):
            n = int(rng.integers(5, 60))
            p = rng.normal(0.0, 1.0, n)
            s = np.abs(rng.normal(0.0, 0.3, n))
            d = p + rng.normal(0.0, 0.2, n)
            summary, measured = summary_and_trace(p, s, d)
            results = {r.metric.value: r.value for r in compute_all(summary, measured, cfg)}
            expected = oracle(p.tolist(), s.tolist(), d.tolist(), 0.05, 0.05)
            assert set(results) == set(expected)
            for name, value in expected.items():
                assert results[name] == pytest.approx(value, rel=1e-12, abs=1e-15)

    def test_degenerate_metric_absent(self):
        """Without spread only the NED metrics drop out."""
        summary, measured = summary_and_trace([1.0, 2.0], None, [1.5, 2.5])
        names = [r.metric for r in compute_all(summary, measured)]
        assert names == [MetricName.RMSE, MetricName.AVG_REL_ERR, MetricName.MAX_REL_ERR]

    def test_requested_subset(self):
        """Only the requested metrics are computed."""
        summary, measured = summary_and_trace([1.0, 2.0], [0.1, 0.1], [1.5, 2.5])
        results = compute_all(summary, measured, metrics=[MetricName.TOTAL_NED])
        assert [r.metric for r in results] == [MetricName.TOTAL_NED]

    def test_unaligned_grid(self):
        """The measurement must be resampled first."""
        summary, _ = summary_and_trace([1.0, 2.0], [0.1, 0.1], [1.0, 2.0])
        shifted = Trace(1, Quantity.POSITION, TraceKind.MEASURED, [0.005, 0.015], [1.0, 2.0])
        with pytest.raises(AlignmentError):
            compute_all(summary, shifted)

    def test_quantity_mismatch(self):
        """Measured and predicted quantities must agree."""
        summary, _ = summary_and_trace([1.0, 2.0], [0.1, 0.1], [1.0, 2.0])
        other = Trace(1, Quantity.VELOCITY, TraceKind.MEASURED, summary.t_s, [1.0, 2.0])
        with pytest.raises(AlignmentError):
            compute_all(summary, other)

    def test_results_carry_run_and_quantity(self):
        """Every result is keyed by the summary's run and quantity."""
        summary, measured = summary_and_trace([1.0, 2.0], [0.1, 0.1], [1.0, 2.5], Quantity.ANGULAR_POSITION)
        results = compute_all(summary, measured)
        assert len(results) == len(ALL_METRICS)
        assert {r.key[:2] for r in results} == {(1, Quantity.ANGULAR_POSITION)}


class TestProperties:
    """Algebraic properties of the metrics."""

    @settings(max_examples=50, deadline=None)
    @given(paired())
    def test_rmse_zero_iff_equal(self, pair):
        """RMSE vanishes exactly on identical series."""
        p, d = pair
        assert rmse(p, p).value == 0.0
        if p != d:
            assert rmse(p, d).value > 0.0

    @settings(max_examples=50, deadline=None)
    @given(paired())
    def test_rmse_symmetric(self, pair):
        """RMSE does not care which side is the prediction."""
        p, d = pair
        assert rmse(p, d).value == pytest.approx(rmse(d, p).value)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite.map(abs), min_size=1, max_size=40))
    def test_total_ned_bounds_mean_ned(self, distances):
        """The quadratic mean is never below the arithmetic mean."""
        assert total_ned(distances).value >= mean_ned(distances).value * (1 - 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(paired(), st.floats(min_value=0.01, max_value=10.0))
    def test_ned_scale_invariant(self, pair, scale):
        """Scaling prediction, spread and measurement together leaves the NED unchanged."""
        p, d = pair
        s = [1.0] * len(p)
        base, _ = ned_pointwise(p, s, d)
        scaled, _ = ned_pointwise(
            [x * scale for x in p], [x * scale for x in s], [x * scale for x in d], MetricConfig(eps_sigma=1e-9)
        )
        np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(paired())
    def test_max_bounds_average(self, pair):
        """The maximum relative error bounds the average one."""
        p, d = pair
        try:
            avg = avg_rel_err(p, d).value
        except DegenerateDataError:
            return
        assert max_rel_err(p, d).value >= avg * (1 - 1e-12)
