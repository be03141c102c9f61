"""Tests for parameter estimation."""

import math

import numpy as np
import pytest

from store.records import RunRecord
from testbed.enactment import NoiseSpec, enact
from testbed.errors import DomainError
from testbed.params import FaultKind, FaultSpec, apply_fault
from testbed.trajectory import generate_trajectory
from twin.errors import CostEvaluationError, OptimizerInitError
from twin.estimation import (
    CostContext,
    EstimationProblem,
    GuessPolicy,
    InitialGuessPolicy,
    NelderMeadOptions,
    estimate_parameters,
    initial_guess,
    nelder_mead,
    sse_cost,
)
from twin.traces import Quantity


@pytest.fixture
def deficit_run(params, noiseless):
    """A noiseless run on a plant with a 10% velocity deficit."""
    trajectory = generate_trajectory(0.1, 0.6, params, run_id=21)
    plant = apply_fault(params, FaultSpec(FaultKind.VELOCITY_DEFICIT, 0.10))
    enactment = enact(trajectory, plant, noiseless)
    return CostContext.from_traces(trajectory, enactment.measured), plant


class TestNelderMead:
    """Tests for the simplex optimizer."""

    def test_quadratic(self):
        """(p - 3)^2 is minimized at 3."""
        result = nelder_mead(lambda x: float((x[0] - 3.0) ** 2), [0.0])
        assert result.converged
        assert abs(result.x[0] - 3.0) < 1e-5
        assert result.initial_guess == {"p0": 0.0}

    def test_rosenbrock(self):
        """The banana valley is followed to (1, 1)."""

        def rosenbrock(x):
            return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)

        result = nelder_mead(rosenbrock, [-1.2, 1.0], names=["a", "b"])
        assert result.converged
        assert abs(result.estimate["a"] - 1.0) < 1e-3
        assert abs(result.estimate["b"] - 1.0) < 1e-3
        assert result.evaluations > result.iterations

    def test_non_finite_start(self):
        """The initial point must have a finite cost."""
        with pytest.raises(OptimizerInitError):
            nelder_mead(lambda x: math.nan, [1.0])

    def test_failing_start(self):
        """A cost that cannot be evaluated at x0 is an init error."""

        def broken(x):
            raise CostEvaluationError({"p0": float(x[0])}, "boom")

        with pytest.raises(OptimizerInitError):
            nelder_mead(broken, [1.0])

    def test_empty_start(self):
        """At least one dimension is required."""
        with pytest.raises(OptimizerInitError):
            nelder_mead(lambda x: 0.0, [])

    def test_infeasible_region_is_infinite(self):
        """Failed evaluations away from x0 are treated as +inf."""

        def cost(x):
            if x[0] <= 0.0:
                return math.nan
            return float((x[0] - 1.0) ** 2)

        result = nelder_mead(cost, [0.1])
        assert result.converged
        assert abs(result.x[0] - 1.0) < 1e-5

    def test_iteration_budget(self):
        """Running out of iterations is reported as not converged."""
        result = nelder_mead(lambda x: float((x[0] - 3.0) ** 2), [0.0], NelderMeadOptions(max_iter=2))
        assert not result.converged
        assert result.iterations == 2

    def test_options_validation(self):
        """Bad options are domain errors."""
        with pytest.raises(DomainError):
            NelderMeadOptions(max_iter=0)


class TestProblem:
    """Tests for EstimationProblem and the guess policies."""

    def test_unknown_parameter(self):
        """Free parameters must be crane parameters."""
        with pytest.raises(DomainError):
            EstimationProblem(1, ("mass_kg",))

    def test_velocity_policy_needs_v_max(self):
        """A velocity-based guess needs v_max to be free."""
        with pytest.raises(DomainError):
            EstimationProblem(1, ("rope_length_m",))

    def test_explicit_needs_guess(self):
        """The explicit policy cannot start without a guess."""
        with pytest.raises(DomainError):
            EstimationProblem(1, ("rope_length_m",), policy=InitialGuessPolicy.explicit())

    def test_guess_outside_bounds(self):
        """Initial guesses must respect the bounds."""
        with pytest.raises(DomainError):
            EstimationProblem(1, initial_guess={"v_max_mps": 50.0})

    def test_non_state_quantity(self):
        """The cost only compares simulated state quantities."""
        with pytest.raises(DomainError):
            EstimationProblem(1, quantities=(Quantity.COMMANDED_VELOCITY,))

    def test_parse_policies(self):
        """Policies parse from their labels."""
        policy = InitialGuessPolicy.parse("fraction_of_reference(0.9)")
        assert policy.kind is GuessPolicy.FRACTION_OF_REFERENCE
        assert policy.fraction == 0.9
        assert policy.label == "fraction_of_reference(0.9)"
        assert InitialGuessPolicy.parse("reference_max").kind is GuessPolicy.REFERENCE_MAX
        with pytest.raises(DomainError):
            InitialGuessPolicy.parse("fraction_of_reference(x)")
        with pytest.raises(DomainError):
            InitialGuessPolicy.parse("oracle")

    def test_initial_guesses(self, deficit_run):
        """Reference policies scale the commanded peak; passthrough reads the measured peak."""
        context, _ = deficit_run
        peak = context.trajectory.peak_velocity_mps
        ref = initial_guess(EstimationProblem(21), context)
        frac = initial_guess(EstimationProblem(21, policy=InitialGuessPolicy.fraction_of_reference(0.9)), context)
        measured = initial_guess(EstimationProblem(21, policy=InitialGuessPolicy.measured_max_passthrough()), context)
        assert ref["v_max_mps"] == peak
        assert frac["v_max_mps"] == pytest.approx(0.9 * peak)
        velocity = context.measured[Quantity.VELOCITY].values
        assert measured["v_max_mps"] == float(np.max(np.abs(velocity)))


class TestCost:
    """Tests for the SSE cost."""

    def test_zero_at_truth(self, deficit_run):
        """The true plant reproduces a noiseless run exactly."""
        context, plant = deficit_run
        assert sse_cost(plant, 21, context=context) == 0.0

    def test_positive_elsewhere(self, deficit_run, params):
        """The believed parameters do not fit the faulted run."""
        context, _ = deficit_run
        assert context.cost(params) > 0.0

    def test_needs_data(self, params):
        """Without a store or context nothing can be compared."""
        with pytest.raises(CostEvaluationError):
            sse_cost(params, 1)

    def test_missing_measurements(self, params):
        """Every state quantity must be measured."""
        trajectory = generate_trajectory(0.1, 0.6, params)
        with pytest.raises(CostEvaluationError):
            CostContext.from_traces(trajectory, {})

    def test_from_store(self, store, params):
        """A stored run yields the same cost as its in-memory traces."""
        run_id = store.insert_run(RunRecord(v_max_used_mps=params.v_max_mps))
        trajectory = generate_trajectory(0.1, 0.6, params, run_id=run_id)
        plant = apply_fault(params, FaultSpec(FaultKind.VELOCITY_DEFICIT, 0.05))
        enactment = enact(trajectory, plant, NoiseSpec(seed=4))
        store.insert_trajectory(trajectory)
        for trace in enactment.measured.values():
            store.insert_trace(trace)
        in_memory = CostContext.from_traces(trajectory, enactment.measured)
        assert sse_cost(params, run_id, store) == pytest.approx(in_memory.cost(params), rel=1e-12)


class TestEstimateParameters:
    """Tests for estimate_parameters()."""

    def test_recovers_velocity_deficit(self, deficit_run, params, bus):
        """Starting below the commanded peak recovers the plant's v_max."""
        context, plant = deficit_run
        updates = bus.subscribe("twin.params_updated")
        problem = EstimationProblem(21, base_params=params, policy=InitialGuessPolicy.fraction_of_reference(0.9))
        result = estimate_parameters(21, problem, context=context, bus=bus)
        assert result.converged
        assert result.is_estimate
        assert result.run_id == 21
        assert abs(result.estimate["v_max_mps"] - plant.v_max_mps) / plant.v_max_mps < 0.01
        assert result.cost < result.initial_cost
        event = updates.poll()
        assert event.payload["param"] == "v_max_mps"
        assert event.payload["old"] == params.v_max_mps
        assert event.payload["new"] == result.estimate["v_max_mps"]

    def test_updated_params(self, deficit_run, params):
        """An estimate folds back into the twin parameters."""
        context, _ = deficit_run
        problem = EstimationProblem(21, base_params=params, policy=InitialGuessPolicy.fraction_of_reference(0.9))
        result = estimate_parameters(21, problem, context=context)
        updated = result.updated_params(params)
        assert updated.v_max_mps == result.estimate["v_max_mps"]
        assert updated.rope_length_m == params.rope_length_m

    def test_passthrough_is_not_an_estimate(self, deficit_run, params, bus):
        """The measured-max policy skips the optimizer and publishes nothing."""
        context, _ = deficit_run
        updates = bus.subscribe("twin.params_updated")
        problem = EstimationProblem(21, base_params=params, policy=InitialGuessPolicy.measured_max_passthrough())
        result = estimate_parameters(21, problem, context=context, bus=bus)
        assert not result.is_estimate
        assert result.iterations == 0
        assert result.to_dict()["initial_guess_policy"] == "measured_max_passthrough"
        assert updates.poll() is None

    def test_no_update_without_convergence(self, deficit_run, params, bus):
        """A non-converged result is returned but never published."""
        context, _ = deficit_run
        updates = bus.subscribe("twin.params_updated")
        problem = EstimationProblem(
            21,
            base_params=params,
            policy=InitialGuessPolicy.fraction_of_reference(0.9),
            options=NelderMeadOptions(max_iter=1),
        )
        result = estimate_parameters(21, problem, context=context, bus=bus)
        assert not result.converged
        assert updates.poll() is None

    def test_reference_start_leaves_the_plateau(self, deficit_run, params):
        """The commanded peak and the first simplex vertex tie, and the reflected point improves."""
        context, plant = deficit_run
        peak = context.trajectory.peak_velocity_mps
        at_peak = context.cost(params.with_changes(v_max_mps=peak))
        assert context.cost(params.with_changes(v_max_mps=1.05 * peak)) == pytest.approx(at_peak, rel=1e-6)
        assert context.cost(params.with_changes(v_max_mps=0.95 * peak)) < at_peak
        problem = EstimationProblem(21, base_params=params, policy=InitialGuessPolicy.reference_max())
        result = estimate_parameters(21, problem, context=context)
        assert result.converged
        assert result.initial_guess["v_max_mps"] == peak
        assert abs(result.estimate["v_max_mps"] - plant.v_max_mps) / plant.v_max_mps < 0.01
