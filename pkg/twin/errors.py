"""Errors raised while comparing, validating and evolving the twin."""

from typing import Optional


class ValidationError(Exception):
    """Base class for twin-side errors."""


class AlignmentError(ValidationError):
    """Series that must share a time grid do not."""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        super().__init__(message)


class ExtrapolationError(ValidationError):
    """Resampling was asked for a time outside the measured span."""

    def __init__(self, t_s: float, first_s: float, last_s: float):
        self.t_s = t_s
        self.span = (first_s, last_s)
        super().__init__(f"Time {t_s!r} s outside trace span [{first_s!r}, {last_s!r}] s")


class DegenerateDataError(ValidationError):
    """A metric has no usable samples (all excluded or no spread available)."""

    def __init__(self, metric: str, message: str):
        self.metric = metric
        super().__init__(f"{metric}: {message}")


class MissingThresholdError(ValidationError):
    """No threshold exists for a (metric, quantity) pair."""

    def __init__(self, metric: str, quantity: str):
        self.metric = metric
        self.quantity = quantity
        super().__init__(f"No threshold for metric '{metric}' on quantity '{quantity}'")


class CostEvaluationError(ValidationError):
    """The estimation cost could not be evaluated for a candidate."""

    def __init__(self, candidate: dict, reason: str):
        self.candidate = candidate
        self.reason = reason
        super().__init__(f"Cost evaluation failed for {candidate}: {reason}")


class OptimizerInitError(ValidationError):
    """The optimizer cannot start from the given point."""
