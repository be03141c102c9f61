"""Tests for traces and resampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twin.errors import AlignmentError, ExtrapolationError
from twin.traces import Quantity, ReplicationSummary, Trace, TraceKind, resample


def trace(t, values):
    return Trace(1, Quantity.POSITION, TraceKind.MEASURED, t, values)


class TestTrace:
    """Trace construction checks."""

    def test_coerces(self):
        """Lists become float arrays and enums are normalized."""
        tr = Trace(1, "velocity", "measured", [0, 1], [1, 2])
        assert tr.quantity is Quantity.VELOCITY
        assert tr.kind is TraceKind.MEASURED
        assert tr.values.dtype == float
        assert len(tr) == 2
        assert tr.samples() == [(0.0, 1.0), (1.0, 2.0)]

    def test_length_mismatch(self):
        """Timestamps and values pair up one to one."""
        with pytest.raises(AlignmentError):
            trace([0.0, 1.0], [1.0])

    def test_increasing_time(self):
        """Timestamps strictly increase."""
        with pytest.raises(AlignmentError):
            trace([0.0, 0.0], [1.0, 2.0])

    def test_finite(self):
        """NaN samples are rejected."""
        with pytest.raises(AlignmentError):
            trace([0.0, 1.0], [1.0, np.nan])

    def test_summary_shapes(self):
        """Summary arrays share the time grid."""
        with pytest.raises(AlignmentError):
            ReplicationSummary(1, Quantity.POSITION, np.zeros(3), np.zeros(2), None, 2)
        summary = ReplicationSummary(1, Quantity.POSITION, np.arange(2.0), np.ones(2), np.zeros(2), 3)
        assert summary.mean_trace().kind is TraceKind.SIMULATED_MEAN
        assert summary.std_trace().kind is TraceKind.SIMULATED_STD


class TestResample:
    """Tests for resample()."""

    def test_identity(self):
        """Resampling onto the original grid returns the same samples."""
        tr = trace([0.0, 0.3, 1.1], [5.0, -2.0, 0.25])
        assert resample(tr, tr.t_s).equals(tr)

    def test_midpoint(self):
        """Linear interpolation between neighbors."""
        assert resample(trace([0.0, 1.0], [0.0, 2.0]), [0.5]).values.tolist() == [1.0]

    def test_keeps_identity(self):
        """Run, quantity and kind are carried over."""
        tr = Trace(7, Quantity.ANGULAR_POSITION, TraceKind.SIMULATED, [0.0, 1.0], [0.0, 1.0], replication=3)
        out = resample(tr, [0.25])
        assert (out.run_id, out.quantity, out.kind, out.replication) == (7, Quantity.ANGULAR_POSITION, TraceKind.SIMULATED, 3)

    @pytest.mark.parametrize("t", [-0.01, 1.01])
    def test_no_extrapolation(self, t):
        """Targets outside the measured span are refused."""
        with pytest.raises(ExtrapolationError) as exc_info:
            resample(trace([0.0, 1.0], [0.0, 2.0]), [0.5, t])
        assert exc_info.value.t_s == t
        assert exc_info.value.span == (0.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.integers(-1000, 1000), min_size=2, max_size=20),
        st.lists(st.integers(1, 99), min_size=1, max_size=30),
    )
    def test_piecewise_linear_round_trip(self, knots, fractions):
        """A denser grid that contains the knots reproduces them exactly."""
        t = np.arange(len(knots), dtype=float)
        tr = trace(t, np.asarray(knots, dtype=float) / 8.0)
        extra = [i + f / 100.0 for i in range(len(knots) - 1) for f in fractions]
        dense = np.unique(np.concatenate([t, extra]))
        back = resample(resample(tr, dense), t)
        assert np.array_equal(back.values, tr.values)
