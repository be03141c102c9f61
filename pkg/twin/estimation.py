"""Twin evolution: recover changed crane parameters from a divergent run.

The cost is the sum of squared errors between the run's measured traces and a single
deterministic twin simulation; it is minimized with a Nelder-Mead simplex.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from testbed.dynamics import CONTROL_GAIN_PER_S, DEFAULT_DT_S, integrate
from testbed.errors import DomainError
from testbed.params import FIELD_NAMES, CraneParams, PlantState
from testbed.trajectory import Trajectory

from .errors import CostEvaluationError, OptimizerInitError
from .traces import STATE_QUANTITIES, Quantity, Trace, TraceKind, resample

if TYPE_CHECKING:
    from server.event_bus import EventBus
    from store.records import RunRecord
    from store.timeseries import TimeSeriesStore

logger = logging.getLogger(__name__)

DEFAULT_COST_QUANTITIES: Tuple[Quantity, ...] = (Quantity.POSITION, Quantity.VELOCITY)

# Physical guard rails applied by projection before every cost evaluation.
DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "rope_length_m": (0.01, 5.0),
    "gravity_mps2": (0.1, 100.0),
    "v_max_mps": (1e-3, 10.0),
    "a_max_mps2": (1e-3, 100.0),
    "damping_per_s": (0.0, 10.0),
    "track_length_m": (1e-3, 100.0),
}


@dataclass(frozen=True)
class NelderMeadOptions:
    f_tol: float = 1e-9
    x_tol: float = 1e-6
    max_iter: Optional[int] = None
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    step_fraction: float = 0.05
    zero_step: float = 1e-4

    def __post_init__(self):
        for name in ("f_tol", "x_tol", "reflect", "expand", "contract", "shrink", "step_fraction", "zero_step"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise DomainError(name, value, f"Nelder-Mead option '{name}' must be > 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise DomainError("max_iter", self.max_iter, "max_iter must be >= 1")

    def iterations_for(self, dimension: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return 200 if dimension == 1 else 2000


class GuessPolicy(str, Enum):
    REFERENCE_MAX = "reference_max"
    FRACTION_OF_REFERENCE = "fraction_of_reference"
    MEASURED_MAX_PASSTHROUGH = "measured_max_passthrough"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class InitialGuessPolicy:
    """Where the optimizer starts for v_max_mps.

    The reference policies start from the peak commanded velocity (optionally scaled).
    The passthrough policy skips optimization and reads the peak measured velocity
    directly; it is kept for comparison and is not an estimate.
    """

    kind: GuessPolicy = GuessPolicy.REFERENCE_MAX
    fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", GuessPolicy(self.kind))
        if not math.isfinite(self.fraction) or self.fraction <= 0:
            raise DomainError("fraction", self.fraction, "Initial-guess fraction must be > 0")

    @classmethod
    def reference_max(cls) -> "InitialGuessPolicy":
        return cls(GuessPolicy.REFERENCE_MAX)

    @classmethod
    def fraction_of_reference(cls, fraction: float) -> "InitialGuessPolicy":
        return cls(GuessPolicy.FRACTION_OF_REFERENCE, fraction)

    @classmethod
    def measured_max_passthrough(cls) -> "InitialGuessPolicy":
        return cls(GuessPolicy.MEASURED_MAX_PASSTHROUGH)

    @classmethod
    def explicit(cls) -> "InitialGuessPolicy":
        return cls(GuessPolicy.EXPLICIT)

    @classmethod
    def parse(cls, text: str) -> "InitialGuessPolicy":
        """Parse 'reference_max', 'fraction_of_reference(0.9)', 'measured_max_passthrough' or 'explicit'."""
        text = text.strip()
        if text.startswith("fraction_of_reference"):
            inner = text[len("fraction_of_reference") :].strip("() ")
            try:
                return cls.fraction_of_reference(float(inner))
            except ValueError:
                raise DomainError("policy", text, "Expected fraction_of_reference(<number>)") from None
        try:
            return cls(GuessPolicy(text))
        except ValueError:
            raise DomainError("policy", text, f"Unknown initial-guess policy '{text}'") from None

    @property
    def label(self) -> str:
        if self.kind is GuessPolicy.FRACTION_OF_REFERENCE:
            return f"fraction_of_reference({self.fraction:g})"
        return self.kind.value


@dataclass(frozen=True)
class EstimationProblem:
    run_id: int
    free_params: Tuple[str, ...] = ("v_max_mps",)
    initial_guess: Optional[Dict[str, float]] = None
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    quantities: Tuple[Quantity, ...] = DEFAULT_COST_QUANTITIES
    base_params: CraneParams = field(default_factory=CraneParams)
    policy: InitialGuessPolicy = field(default_factory=InitialGuessPolicy)
    options: NelderMeadOptions = field(default_factory=NelderMeadOptions)

    def __post_init__(self):
        object.__setattr__(self, "free_params", tuple(self.free_params))
        object.__setattr__(self, "quantities", tuple(Quantity(q) for q in self.quantities))
        if not self.free_params:
            raise DomainError("free_params", self.free_params, "At least one free parameter is required")
        unknown = [p for p in self.free_params if p not in FIELD_NAMES]
        if unknown:
            raise DomainError("free_params", unknown, f"Unknown crane parameters: {unknown}")
        if not self.quantities:
            raise DomainError("quantities", self.quantities, "The cost needs at least one quantity")
        off_state = [q.value for q in self.quantities if q not in STATE_QUANTITIES]
        if off_state:
            raise DomainError("quantities", off_state, "Cost quantities must be simulated state quantities")
        needs_v_max = self.policy.kind in (
            GuessPolicy.REFERENCE_MAX,
            GuessPolicy.FRACTION_OF_REFERENCE,
            GuessPolicy.MEASURED_MAX_PASSTHROUGH,
        )
        if needs_v_max and "v_max_mps" not in self.free_params:
            raise DomainError("policy", self.policy.label, "Velocity-based guesses need v_max_mps as a free parameter")
        if self.policy.kind is GuessPolicy.EXPLICIT and self.initial_guess is None:
            raise DomainError("initial_guess", None, "The explicit policy needs an initial guess")
        if self.initial_guess is not None:
            for name in self.free_params:
                if name not in self.initial_guess:
                    raise DomainError("initial_guess", name, f"No initial guess for '{name}'")
                lo, hi = self.bounds_for(name)
                if not lo <= self.initial_guess[name] <= hi:
                    raise DomainError("initial_guess", self.initial_guess[name], f"'{name}' guess outside [{lo}, {hi}]")

    def bounds_for(self, name: str) -> Tuple[float, float]:
        return self.bounds.get(name, DEFAULT_BOUNDS[name])


@dataclass(frozen=True)
class EstimationResult:
    estimate: Dict[str, float]
    cost: float
    iterations: int
    converged: bool
    initial_guess_policy: str = GuessPolicy.EXPLICIT.value
    evaluations: int = 0
    initial_cost: float = float("nan")
    initial_guess: Dict[str, float] = field(default_factory=dict)
    run_id: Optional[int] = None
    is_estimate: bool = True

    @property
    def x(self) -> np.ndarray:
        return np.array(list(self.estimate.values()))

    def updated_params(self, params: CraneParams) -> CraneParams:
        return params.with_changes(**self.estimate)

    def to_dict(self) -> Dict:
        return {
            "run_id": self.run_id,
            "estimate": dict(self.estimate),
            "cost": self.cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "initial_guess_policy": self.initial_guess_policy,
            "initial_guess": dict(self.initial_guess),
            "initial_cost": self.initial_cost,
            "evaluations": self.evaluations,
            "is_estimate": self.is_estimate,
        }


class NMSimplex:
    """N + 1 vertices with their cost values, kept sorted best first."""

    def __init__(self, x0: np.ndarray, f: Callable[[np.ndarray], float], options: NelderMeadOptions):
        self.n = x0.size
        self.f = f
        self.nfe = 0
        steps = np.where(x0 != 0.0, options.step_fraction * x0, options.zero_step)
        self.vertices = np.tile(x0, (self.n + 1, 1))
        for i in range(self.n):
            self.vertices[i + 1, i] += steps[i]
        self.values = np.array([self.evaluate(v) for v in self.vertices])
        self.order()

    def evaluate(self, x: np.ndarray) -> float:
        self.nfe += 1
        return self.f(x)

    def order(self) -> None:
        idx = np.argsort(self.values, kind="stable")
        self.vertices = self.vertices[idx]
        self.values = self.values[idx]

    def replace_worst(self, x: np.ndarray, value: float) -> None:
        self.vertices[-1] = x
        self.values[-1] = value

    def shrink(self, ratio: float) -> None:
        best = self.vertices[0]
        for i in range(1, self.n + 1):
            self.vertices[i] = best + ratio * (self.vertices[i] - best)
            self.values[i] = self.evaluate(self.vertices[i])

    def f_spread(self) -> float:
        return float(self.values[-1] - self.values[0]) if np.all(np.isfinite(self.values)) else math.inf

    def x_spread(self) -> float:
        return float(np.max(np.abs(self.vertices[1:] - self.vertices[0])))


def nelder_mead(
    cost: Callable[[np.ndarray], float],
    x0: Union[Sequence[float], np.ndarray],
    options: Optional[NelderMeadOptions] = None,
    names: Optional[Sequence[str]] = None,
) -> EstimationResult:
    """Minimize `cost` from `x0`.

    The initial simplex adds 5% of each component (or an absolute 1e-4 for zero
    components). Iteration stops when both the value spread and the vertex spread of
    the simplex fall below their tolerances, or after the iteration budget. A
    non-finite cost after the first evaluation counts as +inf.

    Raises:
        OptimizerInitError: Empty x0 or a non-finite cost at x0
    """
    options = options or NelderMeadOptions()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x0.ndim != 1 or x0.size < 1:
        raise OptimizerInitError("Nelder-Mead needs at least one dimension")
    if not np.all(np.isfinite(x0)):
        raise OptimizerInitError(f"Initial point {x0.tolist()} is not finite")
    labels = list(names) if names is not None else [f"p{i}" for i in range(x0.size)]

    try:
        f0 = float(cost(x0))
    except CostEvaluationError as e:
        raise OptimizerInitError(f"Cost cannot be evaluated at the initial point: {e}") from e
    if not math.isfinite(f0):
        raise OptimizerInitError(f"Cost at the initial point is {f0!r}")

    def guarded(x: np.ndarray) -> float:
        try:
            value = float(cost(x))
        except CostEvaluationError as e:
            logger.warning(f"Cost evaluation failed at {x.tolist()}, treating as +inf: {e.reason}")
            return math.inf
        if not math.isfinite(value):
            logger.warning(f"Non-finite cost {value!r} at {x.tolist()}, treating as +inf")
            return math.inf
        return value

    first = True

    def objective(x: np.ndarray) -> float:
        nonlocal first
        if first and np.array_equal(x, x0):
            first = False
            return f0
        return guarded(x)

    simplex = NMSimplex(x0, objective, options)
    max_iter = options.iterations_for(x0.size)
    iterations = 0
    converged = simplex.f_spread() < options.f_tol and simplex.x_spread() < options.x_tol
    while not converged and iterations < max_iter:
        iterations += 1
        worst = simplex.vertices[-1].copy()
        centroid = simplex.vertices[:-1].mean(axis=0)
        xr = centroid + options.reflect * (centroid - worst)
        fr = simplex.evaluate(xr)
        if simplex.values[0] <= fr < simplex.values[-2]:
            simplex.replace_worst(xr, fr)
        elif fr < simplex.values[0]:
            xe = centroid + options.expand * (xr - centroid)
            fe = simplex.evaluate(xe)
            if fe < fr:
                simplex.replace_worst(xe, fe)
            else:
                simplex.replace_worst(xr, fr)
        else:
            if fr < simplex.values[-1]:
                xc = centroid + options.contract * (xr - centroid)
                fc = simplex.evaluate(xc)
                accepted = fc <= fr
            else:
                xc = centroid + options.contract * (worst - centroid)
                fc = simplex.evaluate(xc)
                accepted = fc < simplex.values[-1]
            if accepted:
                simplex.replace_worst(xc, fc)
            else:
                simplex.shrink(options.shrink)
        simplex.order()
        logger.debug(f"Nelder-Mead iteration {iterations}: best {simplex.values[0]:.6g} at {simplex.vertices[0].tolist()}")
        converged = simplex.f_spread() < options.f_tol and simplex.x_spread() < options.x_tol

    best = simplex.vertices[0]
    return EstimationResult(
        estimate={name: float(v) for name, v in zip(labels, best)},
        cost=float(simplex.values[0]),
        iterations=iterations,
        converged=bool(converged),
        evaluations=simplex.nfe,
        initial_cost=f0,
        initial_guess={name: float(v) for name, v in zip(labels, x0)},
    )


@dataclass(frozen=True, eq=False)
class CostContext:
    """Everything one cost evaluation needs, loaded once per estimation."""

    run_id: int
    trajectory: Trajectory
    measured: Dict[Quantity, Trace]
    initial: PlantState
    dt_s: float = DEFAULT_DT_S
    control_gain: float = CONTROL_GAIN_PER_S

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.measured.values())))

    @classmethod
    def from_traces(
        cls,
        trajectory: Trajectory,
        measured: Dict[Quantity, Trace],
        dt_s: float = DEFAULT_DT_S,
        control_gain: float = CONTROL_GAIN_PER_S,
    ) -> "CostContext":
        missing = [q.value for q in STATE_QUANTITIES if q not in measured or len(measured[q]) == 0]
        if missing:
            raise CostEvaluationError({}, f"run {trajectory.run_id} has no measurements for {missing}")
        initial = PlantState(0.0, *(float(measured[q].values[0]) for q in STATE_QUANTITIES))
        return cls(trajectory.run_id, trajectory, dict(measured), initial, dt_s, control_gain)

    @classmethod
    def from_store(
        cls,
        store: "TimeSeriesStore",
        run_id: int,
        legacy: bool = False,
        dt_s: float = DEFAULT_DT_S,
        control_gain: float = CONTROL_GAIN_PER_S,
    ) -> "CostContext":
        """Load a run's measurements and its experiment input from a store.

        With `legacy` the input is rebuilt from the logged commanded velocity instead of
        the stored trajectory.
        """
        measured = {q: store.query_traces(run_id, q, TraceKind.MEASURED) for q in STATE_QUANTITIES}
        if legacy:
            trajectory = store.derive_trajectory(run_id)
        else:
            trajectory = store.query_trajectory(run_id)
        return cls.from_traces(trajectory, measured, dt_s, control_gain)

    def cost(self, candidate: CraneParams, quantities: Sequence[Quantity] = DEFAULT_COST_QUANTITIES) -> float:
        """Sum over `quantities` of the squared simulation-vs-measurement residuals.

        Raises:
            CostEvaluationError: The simulation fails or produces non-finite values
        """
        try:
            states = integrate(self.initial, self.trajectory, candidate, self.n_samples, self.dt_s, self.control_gain)
        except (ValueError, ArithmeticError) as e:
            raise CostEvaluationError(candidate.to_dict(), str(e)) from e
        if not np.all(np.isfinite(states)):
            raise CostEvaluationError(candidate.to_dict(), "simulation diverged")
        t = np.arange(self.n_samples) * self.trajectory.sample_period_s
        wanted = set(Quantity(q) for q in quantities)
        total = 0.0
        for i, q in enumerate(STATE_QUANTITIES):
            if q not in wanted:
                continue
            measured = self.measured[q]
            simulated = resample(Trace(self.run_id, q, TraceKind.SIMULATED, t, states[i]), measured.t_s)
            total += float(np.sum((simulated.values - measured.values) ** 2))
        return total


def _run_id(run: Union["RunRecord", int]) -> int:
    return int(getattr(run, "run_id", run))


def sse_cost(
    candidate: CraneParams,
    run: Union["RunRecord", int],
    store: Optional["TimeSeriesStore"] = None,
    quantities: Sequence[Quantity] = DEFAULT_COST_QUANTITIES,
    context: Optional[CostContext] = None,
) -> float:
    """SSE of one deterministic twin simulation against the run's measurements."""
    if context is None:
        if store is None:
            raise CostEvaluationError(candidate.to_dict(), "either a store or a cost context is required")
        context = CostContext.from_store(store, _run_id(run))
    return context.cost(candidate, quantities)


def initial_guess(problem: EstimationProblem, context: CostContext) -> Dict[str, float]:
    guess = {name: float(getattr(problem.base_params, name)) for name in problem.free_params}
    if problem.initial_guess is not None:
        guess.update(problem.initial_guess)
    policy = problem.policy
    if policy.kind in (GuessPolicy.REFERENCE_MAX, GuessPolicy.FRACTION_OF_REFERENCE):
        guess["v_max_mps"] = context.trajectory.peak_velocity_mps * policy.fraction
    elif policy.kind is GuessPolicy.MEASURED_MAX_PASSTHROUGH:
        guess["v_max_mps"] = float(np.max(np.abs(context.measured[Quantity.VELOCITY].values)))
    return guess


def estimate_parameters(
    run: Union["RunRecord", int],
    problem: EstimationProblem,
    store: Optional["TimeSeriesStore"] = None,
    context: Optional[CostContext] = None,
    bus: Optional["EventBus"] = None,
) -> EstimationResult:
    """Estimate the problem's free parameters for one run.

    On convergence a `twin.params_updated` event is published per parameter; a
    non-converged result publishes nothing.
    """
    run_id = _run_id(run)
    if context is None:
        if store is None:
            raise CostEvaluationError({}, "either a store or a cost context is required")
        context = CostContext.from_store(store, run_id)
    names = list(problem.free_params)
    bounds = np.array([problem.bounds_for(n) for n in names])
    guess = initial_guess(problem, context)
    x0 = np.clip(np.array([guess[n] for n in names]), bounds[:, 0], bounds[:, 1])

    def params_at(x: np.ndarray) -> CraneParams:
        projected = np.clip(x, bounds[:, 0], bounds[:, 1])
        return problem.base_params.with_changes(**{n: float(v) for n, v in zip(names, projected)})

    def cost(x: np.ndarray) -> float:
        return context.cost(params_at(x), problem.quantities)

    if problem.policy.kind is GuessPolicy.MEASURED_MAX_PASSTHROUGH:
        value = cost(x0)
        result = EstimationResult(
            estimate={n: float(v) for n, v in zip(names, x0)},
            cost=value,
            iterations=0,
            converged=True,
            initial_guess_policy=problem.policy.label,
            evaluations=1,
            initial_cost=value,
            initial_guess={n: float(v) for n, v in zip(names, x0)},
            run_id=run_id,
            is_estimate=False,
        )
        logger.info(f"Run {run_id}: measured-max passthrough gives v_max {x0[0]:.5f} m/s (not an estimate)")
        return result

    raw = nelder_mead(cost, x0, problem.options, names)
    projected = np.clip(raw.x, bounds[:, 0], bounds[:, 1])
    result = EstimationResult(
        estimate={n: float(v) for n, v in zip(names, projected)},
        cost=raw.cost,
        iterations=raw.iterations,
        converged=raw.converged,
        initial_guess_policy=problem.policy.label,
        evaluations=raw.evaluations,
        initial_cost=raw.initial_cost,
        initial_guess={n: float(v) for n, v in zip(names, x0)},
        run_id=run_id,
    )
    if not result.converged:
        logger.warning(
            f"Run {run_id}: estimation did not converge after {result.iterations} iterations "
            f"(cost {result.cost:.6g}, policy {result.initial_guess_policy})"
        )
        return result

    logger.info(f"Run {run_id}: estimated {result.estimate} in {result.iterations} iterations (cost {result.cost:.6g})")
    if bus is not None:
        for name in names:
            bus.publish(
                "twin.params_updated",
                {
                    "run_id": run_id,
                    "param": name,
                    "old": float(getattr(problem.base_params, name)),
                    "new": result.estimate[name],
                    "cost": result.cost,
                    "iterations": result.iterations,
                },
            )
    return result
