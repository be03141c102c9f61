"""Linearized cart-pendulum dynamics integrated with classic RK4.

The cart acceleration is commanded; the rope angle obeys
    theta'' = -(g/L) * theta - c * theta' - x'' / L
The commanded acceleration saturates at +/- a_max, and the cart never pushes past
its attainable velocity v_max. The plant and the twin share this core and differ only
in their CraneParams.
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from twin.traces import STATE_QUANTITIES, Quantity, Trace, TraceKind

from .errors import DomainError, PreconditionError
from .params import CraneParams, PlantState
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_DT_S = 0.001
DEFAULT_SAMPLE_PERIOD_S = 0.01
CONTROL_GAIN_PER_S = 50.0

StateTuple = Tuple[float, float, float, float]


def _rates(v: float, theta: float, omega: float, a: float, params: CraneParams) -> StateTuple:
    if a > params.a_max_mps2:
        a = params.a_max_mps2
    elif a < -params.a_max_mps2:
        a = -params.a_max_mps2
    if (v >= params.v_max_mps and a > 0.0) or (v <= -params.v_max_mps and a < 0.0):
        a = 0.0
    g_over_l = params.gravity_mps2 / params.rope_length_m
    return (
        v,
        a,
        omega,
        -g_over_l * theta - params.damping_per_s * omega - a / params.rope_length_m,
    )


def derivatives(state: PlantState, a_cmd: float, params: CraneParams) -> StateTuple:
    """State derivative (x', v', theta', omega') under commanded acceleration `a_cmd`."""
    if not math.isfinite(a_cmd):
        raise DomainError("a_cmd", a_cmd, "Commanded acceleration must be finite")
    return _rates(state.v_mps, state.theta_rad, state.omega_radps, a_cmd, params)


def _limit_command(a: float, v: float, params: CraneParams, dt: float) -> float:
    # Keep the whole step inside |v| <= v_max.
    if a > params.a_max_mps2:
        a = params.a_max_mps2
    elif a < -params.a_max_mps2:
        a = -params.a_max_mps2
    upper = (params.v_max_mps - v) / dt
    lower = (-params.v_max_mps - v) / dt
    if a > upper:
        a = upper
    if a < lower:
        a = lower
    return a


def _rk4(x: float, v: float, th: float, om: float, a: float, params: CraneParams, dt: float) -> StateTuple:
    h = 0.5 * dt
    k1 = _rates(v, th, om, a, params)
    k2 = _rates(v + h * k1[1], th + h * k1[2], om + h * k1[3], a, params)
    k3 = _rates(v + h * k2[1], th + h * k2[2], om + h * k2[3], a, params)
    k4 = _rates(v + dt * k3[1], th + dt * k3[2], om + dt * k3[3], a, params)
    s = dt / 6.0
    return (
        x + s * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        v + s * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        th + s * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        om + s * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    )


def step_rk4(state: PlantState, a_cmd: float, params: CraneParams, dt: float) -> PlantState:
    """Advance `state` by one RK4 step with `a_cmd` held over the step."""
    if not dt > 0:
        raise PreconditionError("step_rk4", f"dt must be > 0, got {dt!r}")
    if not math.isfinite(a_cmd):
        raise DomainError("a_cmd", a_cmd, "Commanded acceleration must be finite")
    x, v, th, om = state.as_tuple()
    a = _limit_command(a_cmd, v, params, dt)
    return PlantState(state.t_s + dt, *_rk4(x, v, th, om, a, params, dt))


def _steps_per_sample(dt_s: float, sample_period_s: float) -> int:
    if not dt_s > 0 or not sample_period_s > 0:
        raise PreconditionError("simulate", "dt and sample period must be > 0")
    m = int(round(sample_period_s / dt_s))
    if m < 1 or abs(m * dt_s - sample_period_s) > 1e-9 * sample_period_s:
        raise PreconditionError(
            "simulate",
            f"sample period {sample_period_s!r} s is not an integer multiple of dt {dt_s!r} s",
        )
    return m


def horizon_samples(trajectory: Trajectory, settle_tail_s: float) -> int:
    """Number of emitted samples: the trajectory plus an at-rest settle tail."""
    return len(trajectory) + int(round(settle_tail_s / trajectory.sample_period_s))


def _check_horizon(trajectory: Trajectory, sample_period_s: float, n_samples: int, settle_tail_s: float) -> None:
    if abs(sample_period_s - trajectory.sample_period_s) > 1e-12:
        raise PreconditionError(
            "simulate",
            f"sample period {sample_period_s!r} differs from the trajectory's {trajectory.sample_period_s!r}",
        )
    available = horizon_samples(trajectory, settle_tail_s)
    if n_samples > available:
        raise PreconditionError(
            "simulate", f"trajectory covers {available} samples, horizon needs {n_samples}"
        )


def integrate(
    initial: PlantState,
    trajectory: Trajectory,
    params: CraneParams,
    n_samples: int,
    dt_s: float = DEFAULT_DT_S,
    control_gain: float = CONTROL_GAIN_PER_S,
) -> np.ndarray:
    """Integrate one plant along `trajectory`; returns an array of shape (4, n_samples).

    The controller is a = dv_ref/dt + k_v * (v_ref - v) with v_ref linearly interpolated
    between trajectory samples; past the trajectory end it holds the final sample.
    """
    ts = trajectory.sample_period_s
    m = _steps_per_sample(dt_s, ts)
    v_ref = trajectory.v_cmd_mps.tolist()
    n_ref = len(v_ref)
    out = np.empty((4, n_samples))
    x, v, th, om = initial.as_tuple()
    for j in range(n_samples):
        out[0, j], out[1, j], out[2, j], out[3, j] = x, v, th, om
        if j == n_samples - 1:
            break
        vj = v_ref[j] if j < n_ref else v_ref[-1]
        vj1 = v_ref[j + 1] if j + 1 < n_ref else v_ref[-1]
        dv = vj1 - vj
        slope = dv / ts
        for i in range(m):
            a = slope + control_gain * (vj + dv * (i / m) - v)
            a = _limit_command(a, v, params, dt_s)
            x, v, th, om = _rk4(x, v, th, om, a, params, dt_s)
    return out


def integrate_batch(
    initials: Sequence[PlantState],
    trajectory: Trajectory,
    params: CraneParams,
    n_samples: int,
    dt_s: float = DEFAULT_DT_S,
    control_gain: float = CONTROL_GAIN_PER_S,
) -> np.ndarray:
    """Vectorized `integrate` over many initial states; returns shape (R, 4, n_samples)."""
    ts = trajectory.sample_period_s
    m = _steps_per_sample(dt_s, ts)
    v_ref = trajectory.v_cmd_mps
    n_ref = v_ref.size
    state = np.array([s.as_tuple() for s in initials], dtype=float).T
    x, v, th, om = state[0].copy(), state[1].copy(), state[2].copy(), state[3].copy()
    out = np.empty((len(initials), 4, n_samples))

    a_max, v_max = params.a_max_mps2, params.v_max_mps
    g_over_l = params.gravity_mps2 / params.rope_length_m
    c, length = params.damping_per_s, params.rope_length_m

    def stage_acc(vs: np.ndarray, a: np.ndarray) -> np.ndarray:
        a = np.minimum(np.maximum(a, -a_max), a_max)
        return np.where(((vs >= v_max) & (a > 0.0)) | ((vs <= -v_max) & (a < 0.0)), 0.0, a)

    def theta_acc(ths: np.ndarray, oms: np.ndarray, a: np.ndarray) -> np.ndarray:
        return -g_over_l * ths - c * oms - a / length

    h = 0.5 * dt_s
    s = dt_s / 6.0
    for j in range(n_samples):
        out[:, 0, j], out[:, 1, j], out[:, 2, j], out[:, 3, j] = x, v, th, om
        if j == n_samples - 1:
            break
        vj = float(v_ref[j]) if j < n_ref else float(v_ref[-1])
        vj1 = float(v_ref[j + 1]) if j + 1 < n_ref else float(v_ref[-1])
        dv = vj1 - vj
        slope = dv / ts
        for i in range(m):
            a = slope + control_gain * (vj + dv * (i / m) - v)
            a = np.minimum(np.maximum(a, -a_max), a_max)
            a = np.minimum(a, (v_max - v) / dt_s)
            a = np.maximum(a, (-v_max - v) / dt_s)

            a1 = stage_acc(v, a)
            w1 = theta_acc(th, om, a1)
            v2, th2, om2 = v + h * a1, th + h * om, om + h * w1
            a2 = stage_acc(v2, a)
            w2 = theta_acc(th2, om2, a2)
            v3, th3, om3 = v + h * a2, th + h * om2, om + h * w2
            a3 = stage_acc(v3, a)
            w3 = theta_acc(th3, om3, a3)
            v4, th4, om4 = v + dt_s * a3, th + dt_s * om3, om + dt_s * w3
            a4 = stage_acc(v4, a)
            w4 = theta_acc(th4, om4, a4)

            x = x + s * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v = v + s * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            th = th + s * (om + 2.0 * om2 + 2.0 * om3 + om4)
            om = om + s * (w1 + 2.0 * w2 + 2.0 * w3 + w4)
    return out


def states_to_traces(
    states: np.ndarray,
    sample_period_s: float,
    run_id: int,
    kind: TraceKind = TraceKind.SIMULATED,
    replication: Optional[int] = None,
) -> Dict[Quantity, Trace]:
    t = np.arange(states.shape[1]) * sample_period_s
    return {
        q: Trace(run_id, q, kind, t, states[i].copy(), replication)
        for i, q in enumerate(STATE_QUANTITIES)
    }


def simulate(
    initial: PlantState,
    trajectory: Trajectory,
    params: CraneParams,
    dt_s: float = DEFAULT_DT_S,
    sample_period_s: Optional[float] = None,
    n_samples: Optional[int] = None,
    settle_tail_s: float = 0.0,
    control_gain: float = CONTROL_GAIN_PER_S,
) -> Dict[Quantity, Trace]:
    """Simulate one run and emit position, velocity, angle and angular velocity traces.

    Args:
        initial: State at t = 0
        trajectory: Reference the controller follows
        params: Model parameters (plant or twin)
        dt_s: Integration step
        sample_period_s: Emission period; must equal the trajectory's
        n_samples: Samples to emit (default: trajectory plus settle tail)
        settle_tail_s: At-rest extension of the trajectory past its end

    Raises:
        PreconditionError: Sample period mismatch or horizon longer than the trajectory
    """
    ts = trajectory.sample_period_s if sample_period_s is None else sample_period_s
    n = horizon_samples(trajectory, settle_tail_s) if n_samples is None else n_samples
    _check_horizon(trajectory, ts, n, settle_tail_s)
    states = integrate(initial, trajectory, params, n, dt_s, control_gain)
    return states_to_traces(states, ts, trajectory.run_id)
