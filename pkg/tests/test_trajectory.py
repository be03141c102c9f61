"""Tests for anti-sway trajectory generation."""

import numpy as np
import pytest

from testbed.dynamics import horizon_samples, integrate
from testbed.errors import PreconditionError
from testbed.params import PlantState
from testbed.trajectory import (
    Trajectory,
    _trapezoid_samples,
    generate_trajectory,
    shaper_impulses,
)
from twin.traces import Quantity, TraceKind


def residual_swing(trajectory: Trajectory, params) -> float:
    """Largest rope angle after the trajectory has ended."""
    n = horizon_samples(trajectory, 3.0)
    states = integrate(PlantState.at_rest(trajectory.start_m), trajectory, params, n)
    return float(np.max(np.abs(states[2, len(trajectory):])))


class TestShaper:
    """Tests for the zero-vibration shaper."""

    def test_amplitudes_sum_to_one(self, params):
        """The impulses preserve the move distance."""
        a1, a2, _ = shaper_impulses(params)
        assert a1 + a2 == pytest.approx(1.0)
        assert a1 > a2 > 0.0

    def test_delay_is_half_damped_period(self, params):
        """The second impulse comes half a swing period later."""
        _, _, delay = shaper_impulses(params)
        assert delay == pytest.approx(params.swing_period_s / 2.0, rel=1e-3)

    def test_undamped_equal_impulses(self, params):
        """Without damping both impulses weigh one half."""
        a1, a2, _ = shaper_impulses(params.with_changes(damping_per_s=0.0))
        assert a1 == pytest.approx(0.5)
        assert a2 == pytest.approx(0.5)


class TestGenerateTrajectory:
    """Tests for generate_trajectory()."""

    def test_invariants(self, params):
        """The default move starts and ends at rest within the bounds."""
        traj = generate_trajectory(0.1, 0.6, params, run_id=5)
        traj.validate(a_max_mps2=params.a_max_mps2)
        assert traj.run_id == 5
        assert traj.t_s[0] == 0.0
        assert traj.x_ref_m[0] == 0.1
        assert traj.x_ref_m[-1] == 0.6
        assert traj.v_cmd_mps[0] == 0.0
        assert traj.v_cmd_mps[-1] == 0.0
        assert traj.peak_velocity_mps <= params.v_max_mps
        assert traj.v_max_used_mps == params.v_max_mps

    def test_reverse_move(self, params):
        """Moving backwards commands negative velocities."""
        traj = generate_trajectory(0.6, 0.1, params)
        assert np.all(traj.v_cmd_mps <= 0.0)
        assert traj.end_m == 0.1

    def test_zero_length_move(self, params):
        """start == end yields a single at-rest sample."""
        traj = generate_trajectory(0.3, 0.3, params)
        assert len(traj) == 1
        assert traj.v_cmd_mps[0] == 0.0

    @pytest.mark.parametrize("start,end", [(-0.1, 0.5), (0.1, 0.71), (float("nan"), 0.5)])
    def test_outside_track(self, params, start, end):
        """Endpoints must lie on the track."""
        with pytest.raises(PreconditionError):
            generate_trajectory(start, end, params)

    def test_follows_twin_v_max(self, params):
        """A lower believed v_max slows the profile down."""
        fast = generate_trajectory(0.1, 0.6, params)
        slow = generate_trajectory(0.1, 0.6, params.with_changes(v_max_mps=0.2))
        assert slow.peak_velocity_mps <= 0.2
        assert len(slow) > len(fast)

    def test_shaping_suppresses_residual_swing(self, params):
        """The shaped move leaves far less swing than the raw trapezoid."""
        shaped = generate_trajectory(0.1, 0.6, params)
        raw = Trajectory.from_commanded_velocity(0, _trapezoid_samples(0.5, params, 0.01), 0.1, params.v_max_mps, 0.01)
        assert raw.end_m == pytest.approx(0.6)
        assert residual_swing(shaped, params) < 0.2 * residual_swing(raw, params)

    def test_nominal_move_settles(self, params):
        """The 0.5 m move ends within 1 mm of the target with under 0.5 degrees of swing."""
        shaped = generate_trajectory(0.1, 0.6, params)
        states = integrate(PlantState.at_rest(0.1), shaped, params, horizon_samples(shaped, 3.0))
        assert abs(states[0, -1] - 0.6) < 1e-3
        assert abs(states[2, -1]) < np.radians(0.5)
        assert residual_swing(shaped, params) < np.radians(0.5)


class TestTrajectory:
    """Tests for the Trajectory container."""

    def test_mismatched_lengths(self):
        """t, x_ref and v_cmd must be equally long."""
        with pytest.raises(PreconditionError):
            Trajectory(0, [0.0, 0.01], [0.0], [0.0, 0.0], 0.281)

    def test_validate_rejects_speeding(self):
        """|v_cmd| above the bound is invalid."""
        traj = Trajectory(0, [0.0, 0.01, 0.02], [0.0, 0.0, 0.0], [0.0, 0.5, 0.0], 0.281)
        with pytest.raises(PreconditionError, match="velocity bound"):
            traj.validate(strict=False)

    def test_validate_rejects_moving_end(self):
        """A trajectory must end at rest."""
        traj = Trajectory(0, [0.0, 0.01], [0.0, 0.001], [0.0, 0.1], 0.281)
        with pytest.raises(PreconditionError, match="must be 0"):
            traj.validate()

    def test_to_traces(self, params):
        """Reference traces carry the setpoints and commands."""
        traj = generate_trajectory(0.1, 0.6, params, run_id=2)
        traces = traj.to_traces()
        assert traces[Quantity.POSITION].kind is TraceKind.REFERENCE
        assert np.array_equal(traces[Quantity.VELOCITY].values, traj.v_cmd_mps)

    def test_csv_round_trip(self, params, tmp_path):
        """Writing and reading a trajectory keeps its samples to 9 digits."""
        traj = generate_trajectory(0.1, 0.6, params)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        assert path.read_text().splitlines()[0] == "t_s,x_ref_m,v_cmd_mps"
        loaded = Trajectory.from_csv(path, run_id=9, v_max_used_mps=params.v_max_mps)
        assert loaded.run_id == 9
        assert loaded.sample_period_s == pytest.approx(0.01)
        np.testing.assert_allclose(loaded.v_cmd_mps, traj.v_cmd_mps, rtol=1e-8, atol=1e-12)
        loaded.validate(strict=False)

    def test_from_commanded_velocity_drops_idle_tail(self):
        """Trailing at-rest samples are cut after the final zero."""
        v = np.array([0.0, 0.1, 0.1, 0.0, 0.0, 0.0])
        traj = Trajectory.from_commanded_velocity(4, v, 0.2, 0.281, 0.01)
        assert len(traj) == 4
        assert traj.x_ref_m[-1] == pytest.approx(0.2 + 0.002)
        traj.validate(strict=False)
