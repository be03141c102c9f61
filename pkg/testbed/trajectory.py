"""Anti-sway reference trajectories.

A trapezoidal velocity profile bounded by (v_max, a_max) is convolved with a two-impulse
zero-vibration shaper tuned to the twin's damped swing frequency. Every corner of the
profile is placed on the sample grid, so the sampled velocity interpolates linearly
without error and the position integrates exactly to the requested displacement.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from twin.traces import Quantity, Trace, TraceKind

from .errors import PreconditionError
from .params import CraneParams

logger = logging.getLogger(__name__)

CSV_HEADER = "t_s,x_ref_m,v_cmd_mps"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Position setpoints and commanded velocities on a uniform grid starting at t = 0."""

    run_id: int
    t_s: np.ndarray
    x_ref_m: np.ndarray
    v_cmd_mps: np.ndarray
    v_max_used_mps: float
    sample_period_s: float = 0.01

    def __post_init__(self):
        for name in ("t_s", "x_ref_m", "v_cmd_mps"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.t_s.shape == self.x_ref_m.shape == self.v_cmd_mps.shape) or self.t_s.ndim != 1:
            raise PreconditionError("Trajectory", "t, x_ref and v_cmd must be 1-D and equally long")
        if self.t_s.size == 0:
            raise PreconditionError("Trajectory", "a trajectory needs at least one sample")

    def __len__(self) -> int:
        return int(self.t_s.size)

    @property
    def samples(self):
        return list(zip(self.t_s.tolist(), self.x_ref_m.tolist(), self.v_cmd_mps.tolist()))

    @property
    def duration_s(self) -> float:
        return float(self.t_s[-1])

    @property
    def start_m(self) -> float:
        return float(self.x_ref_m[0])

    @property
    def end_m(self) -> float:
        return float(self.x_ref_m[-1])

    @property
    def peak_velocity_mps(self) -> float:
        return float(np.max(np.abs(self.v_cmd_mps)))

    def validate(self, a_max_mps2: Optional[float] = None, strict: bool = True) -> None:
        """Check the trajectory invariants.

        Args:
            a_max_mps2: Also check the acceleration bound when given
            strict: Also check x_ref continuity (skipped for trajectories read back from CSV)

        Raises:
            PreconditionError: On the first violated invariant
        """
        ts = self.sample_period_s
        if self.t_s[0] != 0.0:
            raise PreconditionError("Trajectory", "time must start at 0 (run-relative)")
        if len(self) > 1:
            dt = np.diff(self.t_s)
            if not np.all(dt > 0) or np.max(np.abs(dt - ts)) > 1e-9:
                raise PreconditionError("Trajectory", f"time grid must be uniform with period {ts!r}")
        if np.max(np.abs(self.v_cmd_mps)) > self.v_max_used_mps + 1e-12:
            raise PreconditionError("Trajectory", "|v_cmd| exceeds the velocity bound")
        if abs(self.v_cmd_mps[0]) > 1e-12 or abs(self.v_cmd_mps[-1]) > 1e-12:
            raise PreconditionError("Trajectory", "first and last v_cmd must be 0")
        if strict and len(self) > 1:
            if np.max(np.abs(np.diff(self.x_ref_m))) > self.v_max_used_mps * ts + 1e-12:
                raise PreconditionError("Trajectory", "x_ref jumps faster than the velocity bound")
        if a_max_mps2 is not None and len(self) > 1:
            if np.max(np.abs(np.diff(self.v_cmd_mps))) / ts > a_max_mps2 + 1e-9:
                raise PreconditionError("Trajectory", "v_cmd changes faster than the acceleration bound")

    def with_run_id(self, run_id: int) -> "Trajectory":
        return Trajectory(run_id, self.t_s, self.x_ref_m, self.v_cmd_mps, self.v_max_used_mps, self.sample_period_s)

    def to_traces(self) -> Dict[Quantity, Trace]:
        return {
            Quantity.POSITION: Trace(self.run_id, Quantity.POSITION, TraceKind.REFERENCE, self.t_s, self.x_ref_m),
            Quantity.VELOCITY: Trace(self.run_id, Quantity.VELOCITY, TraceKind.REFERENCE, self.t_s, self.v_cmd_mps),
        }

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write `t_s,x_ref_m,v_cmd_mps` rows with 9 significant digits."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        data = np.column_stack([self.t_s, self.x_ref_m, self.v_cmd_mps])
        np.savetxt(path, data, fmt="%.9g", delimiter=",", header=CSV_HEADER, comments="")

    @classmethod
    def from_csv(
        cls,
        path: Union[str, Path],
        run_id: int = 0,
        v_max_used_mps: Optional[float] = None,
    ) -> "Trajectory":
        with open(path) as f:
            header = f.readline().strip()
        if header != CSV_HEADER:
            raise PreconditionError("Trajectory.from_csv", f"expected header '{CSV_HEADER}', got '{header}'")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, x, v = data[:, 0], data[:, 1], data[:, 2]
        ts = float(t[1] - t[0]) if t.size > 1 else 0.01
        ts = round(ts, 9)
        v_bound = float(np.max(np.abs(v))) if v_max_used_mps is None else v_max_used_mps
        return cls(run_id, t, x, v, v_bound, ts)

    @classmethod
    def from_commanded_velocity(
        cls,
        run_id: int,
        v_cmd_mps: np.ndarray,
        start_m: float,
        v_max_used_mps: float,
        sample_period_s: float,
    ) -> "Trajectory":
        """Rebuild a trajectory from logged commanded velocities (legacy systems).

        Trailing at-rest samples beyond the final zero are dropped; the position
        reference is the trapezoidal integral of the commands.
        """
        v = np.asarray(v_cmd_mps, dtype=float)
        moving = np.flatnonzero(np.abs(v) > 0.0)
        end = int(moving[-1]) + 2 if moving.size else 1
        v = v[: min(end, v.size)].copy()
        if v[-1] != 0.0:
            v = np.append(v, 0.0)
        x = start_m + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * sample_period_s)])
        t = np.arange(v.size) * sample_period_s
        return cls(run_id, t, x, v, v_max_used_mps, sample_period_s)


def shaper_impulses(params: CraneParams) -> Tuple[float, float, float]:
    """Zero-vibration shaper (A1, A2, delay) for the damped swing mode of `params`."""
    zeta = params.damping_ratio
    root = math.sqrt(max(1.0 - zeta * zeta, 1e-12))
    k = math.exp(-zeta * math.pi / root)
    omega_d = params.natural_frequency_radps * root
    return 1.0 / (1.0 + k), k / (1.0 + k), math.pi / omega_d


def _trapezoid_samples(distance: float, params: CraneParams, ts: float) -> np.ndarray:
    v_peak = min(params.v_max_mps, math.sqrt(distance * params.a_max_mps2))
    n_acc = max(1, math.ceil(v_peak / params.a_max_mps2 / ts - 1e-9))
    n_cruise = max(0, math.ceil((distance / v_peak - n_acc * ts) / ts - 1e-9))
    v_top = distance / ((n_acc + n_cruise) * ts)
    ramp = v_top * np.arange(n_acc + 1) / n_acc
    return np.concatenate([ramp, np.full(n_cruise, v_top), ramp[::-1][1:]])


def generate_trajectory(
    start_m: float,
    end_m: float,
    params: CraneParams,
    sample_period_s: float = 0.01,
    run_id: int = 0,
) -> Trajectory:
    """Generate an input-shaped move from `start_m` to `end_m` for the twin `params`.

    The second shaper impulse is placed at the sample nearest its delay, so the shaper is
    detuned by up to half a sample period. On the nominal rope this leaves roughly 0.16
    degrees of residual swing.

    Raises:
        PreconditionError: An endpoint lies outside [0, track_length_m]
    """
    for name, value in (("start_m", start_m), ("end_m", end_m)):
        if not math.isfinite(value) or value < 0.0 or value > params.track_length_m:
            raise PreconditionError(
                "generate_trajectory",
                f"{name}={value!r} outside the track [0, {params.track_length_m!r}] m",
            )
    if not sample_period_s > 0:
        raise PreconditionError("generate_trajectory", "sample period must be > 0")

    if start_m == end_m:
        return Trajectory(run_id, np.zeros(1), np.array([start_m]), np.zeros(1), params.v_max_mps, sample_period_s)

    distance = abs(end_m - start_m)
    direction = 1.0 if end_m > start_m else -1.0
    base = _trapezoid_samples(distance, params, sample_period_s)

    a1, a2, delay = shaper_impulses(params)
    shift = max(1, int(round(delay / sample_period_s)))
    shaped = np.zeros(base.size + shift)
    shaped[: base.size] += a1 * base
    shaped[shift:] += a2 * base
    v_cmd = direction * shaped

    steps = 0.5 * (v_cmd[1:] + v_cmd[:-1]) * sample_period_s
    x_ref = start_m + np.concatenate([[0.0], np.cumsum(steps)])
    if abs(x_ref[-1] - end_m) > 1e-7:
        raise PreconditionError("generate_trajectory", f"profile integrates to {x_ref[-1]!r}, not {end_m!r}")
    x_ref[-1] = end_m

    t = np.arange(v_cmd.size) * sample_period_s
    trajectory = Trajectory(run_id, t, x_ref, v_cmd, params.v_max_mps, sample_period_s)
    logger.debug(
        f"Trajectory {run_id}: {start_m} -> {end_m} m, {len(trajectory)} samples, "
        f"peak {trajectory.peak_velocity_mps:.4f} m/s, shaper delay {shift * sample_period_s:.2f} s"
    )
    return trajectory
