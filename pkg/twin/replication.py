"""Replicated twin simulations with uncertain initial conditions."""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np

from testbed.dynamics import CONTROL_GAIN_PER_S, DEFAULT_DT_S, horizon_samples, integrate_batch
from testbed.enactment import SETTLE_TAIL_S, NoiseSpec, run_rng
from testbed.errors import DomainError
from testbed.params import CraneParams, PlantState
from testbed.trajectory import Trajectory

from .errors import AlignmentError
from .traces import STATE_QUANTITIES, Quantity, ReplicationSummary, Trace, TraceKind

if TYPE_CHECKING:
    from server.event_bus import EventBus

logger = logging.getLogger(__name__)

OMEGA_RULES = ("measurement", "derivative_bound")


@dataclass(frozen=True)
class ReplicationPlan:
    """How many twin simulations to run and how uncertain their initial state is."""

    run_id: int
    replications: int = 50
    sigma_x_m: float = 0.0005
    sigma_v_mps: float = 0.001
    sigma_theta_rad: float = 0.000767
    sigma_omega_radps: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.replications, int) or self.replications < 1:
            raise DomainError("replications", self.replications, "At least one replication is required")
        for name in ("sigma_x_m", "sigma_v_mps", "sigma_theta_rad", "sigma_omega_radps"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(name, value, f"'{name}' must be >= 0")

    @classmethod
    def from_noise(
        cls,
        run_id: int,
        noise: NoiseSpec,
        replications: int = 50,
        omega_rule: str = "derivative_bound",
        sample_period_s: float = 0.01,
    ) -> "ReplicationPlan":
        """Tie the initial-condition uncertainty to the sensor noise.

        The default omega_rule "derivative_bound" uses sigma_theta / sample_period, the noise of
        an angle differentiated over one sample. "measurement" uses the angular velocity sensor
        sigma instead.
        """
        if omega_rule not in OMEGA_RULES:
            raise DomainError("omega_rule", omega_rule, f"omega_rule must be one of {OMEGA_RULES}")
        sigma_omega = (
            noise.sigma_omega_radps if omega_rule == "measurement" else noise.sigma_theta_rad / sample_period_s
        )
        return cls(
            run_id,
            replications,
            noise.sigma_pos_m,
            noise.sigma_vel_mps,
            noise.sigma_theta_rad,
            sigma_omega,
            noise.seed,
        )

    @property
    def ic_sigmas(self) -> np.ndarray:
        return np.array([self.sigma_x_m, self.sigma_v_mps, self.sigma_theta_rad, self.sigma_omega_radps])


@dataclass(frozen=True, eq=False)
class ReplicationOutcome:
    """Summaries per quantity plus the raw replication states, shape (R, 4, n)."""

    run_id: int
    summaries: Dict[Quantity, ReplicationSummary]
    states: np.ndarray
    initials: List[PlantState] = field(default_factory=list)
    sample_period_s: float = 0.01

    def __getitem__(self, quantity: Quantity) -> ReplicationSummary:
        return self.summaries[Quantity(quantity)]

    @property
    def replications(self) -> int:
        return int(self.states.shape[0])

    def replication_trace(self, quantity: Quantity, replication: int) -> Trace:
        i = STATE_QUANTITIES.index(Quantity(quantity))
        t = np.arange(self.states.shape[2]) * self.sample_period_s
        return Trace(self.run_id, quantity, TraceKind.SIMULATED, t, self.states[replication, i], replication)


def sample_initial_conditions(measured_initial: PlantState, plan: ReplicationPlan) -> List[PlantState]:
    """Draw one initial state per replication.

    Replication 0 is the measurement itself; replication r >= 1 adds independent
    zero-mean Gaussian perturbations drawn from the stream (seed, run_id, r).
    """
    base = np.array(measured_initial.as_tuple())
    sigmas = plan.ic_sigmas
    states = [measured_initial]
    for r in range(1, plan.replications):
        z = run_rng(plan.seed, plan.run_id, r).standard_normal(4)
        x, v, th, om = (base + sigmas * z).tolist()
        states.append(PlantState(measured_initial.t_s, x, v, th, om))
    return states


def _summarize_stack(
    stack: np.ndarray, t: np.ndarray, run_id: int, quantity: Quantity
) -> ReplicationSummary:
    r = stack.shape[0]
    identical = np.all(stack == stack[0], axis=0)
    mean = np.where(identical, stack[0], np.mean(stack, axis=0))
    std = None
    if r >= 2:
        std = np.where(identical, 0.0, np.std(stack, axis=0, ddof=1))
    return ReplicationSummary(run_id, quantity, t, mean, std, r)


def summarize(traces: Sequence[Trace]) -> ReplicationSummary:
    """Elementwise mean and sample standard deviation (divisor R - 1) of replications.

    Raises:
        AlignmentError: Replications are empty, mix quantities or do not share a time grid
    """
    if not traces:
        raise AlignmentError("Nothing to summarize", expected=1, actual=0)
    first = traces[0]
    for trace in traces[1:]:
        if trace.quantity != first.quantity:
            raise AlignmentError(f"Cannot summarize {first.quantity.value} with {trace.quantity.value}")
        if not np.array_equal(trace.t_s, first.t_s):
            raise AlignmentError(
                f"Replication {trace.replication} is not on the shared time grid",
                expected=len(first),
                actual=len(trace),
            )
    stack = np.stack([tr.values for tr in traces])
    return _summarize_stack(stack, first.t_s, first.run_id, first.quantity)


def run_replications(
    trajectory: Trajectory,
    twin_params: CraneParams,
    plan: ReplicationPlan,
    measured_initial: Optional[PlantState] = None,
    n_samples: Optional[int] = None,
    settle_tail_s: float = SETTLE_TAIL_S,
    dt_s: float = DEFAULT_DT_S,
    control_gain: float = CONTROL_GAIN_PER_S,
    bus: Optional["EventBus"] = None,
) -> ReplicationOutcome:
    """Simulate the twin R times along `trajectory` and summarize every state quantity.

    The replications share one time grid; without a measured initial state the twin
    starts at rest at the trajectory's first position.
    """
    trajectory.validate(strict=False)
    start = measured_initial if measured_initial is not None else PlantState.at_rest(trajectory.start_m)
    n = horizon_samples(trajectory, settle_tail_s) if n_samples is None else n_samples
    initials = sample_initial_conditions(start, plan)
    states = integrate_batch(initials, trajectory, twin_params, n, dt_s, control_gain)

    t = np.arange(n) * trajectory.sample_period_s
    summaries = {q: _summarize_stack(states[:, i, :], t, plan.run_id, q) for i, q in enumerate(STATE_QUANTITIES)}
    logger.info(f"Run {plan.run_id}: {plan.replications} twin replications completed ({n} samples each)")
    if bus is not None:
        bus.publish(
            "run.simulation_completed",
            {"run_id": plan.run_id, "replications": plan.replications, "samples": n},
        )
    return ReplicationOutcome(plan.run_id, summaries, states, initials, trajectory.sample_period_s)
