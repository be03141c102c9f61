"""Execute a trajectory on the (possibly faulted) plant and add sensor noise."""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Any, Dict, Optional

import numpy as np

from twin.traces import STATE_QUANTITIES, Quantity, Trace, TraceKind

from .dynamics import CONTROL_GAIN_PER_S, DEFAULT_DT_S, horizon_samples, integrate
from .errors import DomainError, PreconditionError
from .params import CraneParams, PlantState
from .trajectory import Trajectory

if TYPE_CHECKING:
    from server.event_bus import EventBus

logger = logging.getLogger(__name__)

SETTLE_TAIL_S = 2.0


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian sensor noise per measured quantity.

    sigma_theta_rad is one quadrature count of a 2048-PPR angular encoder, 2*pi/8192.
    """

    sigma_pos_m: float = 0.0005
    sigma_vel_mps: float = 0.001
    sigma_theta_rad: float = 0.000767
    sigma_omega_radps: float = 0.001
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "seed":
                if not isinstance(value, int) or value < 0:
                    raise DomainError("seed", value, "Noise seed must be a non-negative integer")
            elif not math.isfinite(value) or value < 0:
                raise DomainError(f.name, value, f"'{f.name}' must be >= 0")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, seed)

    def sigma_for(self, quantity: Quantity) -> float:
        return {
            Quantity.POSITION: self.sigma_pos_m,
            Quantity.VELOCITY: self.sigma_vel_mps,
            Quantity.ANGULAR_POSITION: self.sigma_theta_rad,
            Quantity.ANGULAR_VELOCITY: self.sigma_omega_radps,
        }.get(Quantity(quantity), 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NoiseSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError("noise", sorted(unknown), f"Unknown noise fields: {sorted(unknown)}")
        return cls(**{k: (int(v) if k == "seed" else float(v)) for k, v in data.items()})


def run_rng(seed: int, run_id: int, *stream: int) -> np.random.Generator:
    """Generator keyed by (seed, run_id, stream...), independent of execution order."""
    return np.random.default_rng([seed, run_id, *stream])


@dataclass(frozen=True, eq=False)
class Enactment:
    """Outcome of executing one run on the plant."""

    run_id: int
    measured: Dict[Quantity, Trace]
    commanded: Trace
    true_states: np.ndarray
    plant_params: CraneParams

    @property
    def n_samples(self) -> int:
        return int(self.true_states.shape[1])

    def measured_initial_state(self) -> PlantState:
        """Initial state as seen by the sensors (first sample of every measured quantity)."""
        return PlantState(0.0, *(float(self.measured[q].values[0]) for q in STATE_QUANTITIES))


def observe(
    run_id: int,
    trajectory: Trajectory,
    states: np.ndarray,
    plant_params: CraneParams,
    noise: NoiseSpec,
) -> Enactment:
    """Turn true plant states (4, n) into the noisy measurements of run `run_id`.

    Noise draws come from `run_rng(noise.seed, run_id)` in the fixed order position,
    velocity, angular position, angular velocity; a zero sigma leaves the true value intact.
    """
    n = int(states.shape[1])
    if n < len(trajectory):
        raise PreconditionError("observe", f"{n} state samples for a {len(trajectory)}-sample trajectory")
    rng = run_rng(noise.seed, run_id)
    draws = rng.standard_normal((len(STATE_QUANTITIES), n))
    t = np.arange(n) * trajectory.sample_period_s

    measured: Dict[Quantity, Trace] = {}
    for i, q in enumerate(STATE_QUANTITIES):
        sigma = noise.sigma_for(q)
        values = states[i] + sigma * draws[i] if sigma > 0 else states[i].copy()
        measured[q] = Trace(run_id, q, TraceKind.MEASURED, t, values)

    v_cmd = np.concatenate([trajectory.v_cmd_mps, np.full(n - len(trajectory), trajectory.v_cmd_mps[-1])])
    commanded = Trace(run_id, Quantity.COMMANDED_VELOCITY, TraceKind.MEASURED, t, v_cmd)
    return Enactment(run_id, measured, commanded, states, plant_params)


def enact(
    trajectory: Trajectory,
    plant_params: CraneParams,
    noise: NoiseSpec,
    settle_tail_s: float = SETTLE_TAIL_S,
    dt_s: float = DEFAULT_DT_S,
    control_gain: float = CONTROL_GAIN_PER_S,
    initial: Optional[PlantState] = None,
    bus: Optional["EventBus"] = None,
) -> Enactment:
    """Run `trajectory` on the plant and return noisy measurements plus the commanded velocity.

    The plant starts at rest at the trajectory's first position unless `initial` is given.

    Raises:
        PreconditionError: The trajectory violates its invariants
    """
    trajectory.validate(strict=False)
    n = horizon_samples(trajectory, settle_tail_s)
    start = initial if initial is not None else PlantState.at_rest(trajectory.start_m)
    states = integrate(start, trajectory, plant_params, n, dt_s, control_gain)
    enactment = observe(trajectory.run_id, trajectory, states, plant_params, noise)

    logger.info(
        f"Run {trajectory.run_id} enacted: {n} samples, plant rope {plant_params.rope_length_m:.4f} m, "
        f"v_max {plant_params.v_max_mps:.4f} m/s"
    )
    if bus is not None:
        bus.publish("run.measured_ready", {"run_id": trajectory.run_id, "samples": n})
    return enactment
