"""Custom exceptions for the policy search toolkit."""

from typing import Optional


class PolicySearchError(Exception):
    """Base exception for all policy search errors."""
    pass


class ValidationError(PolicySearchError):
    """Raised when input validation fails."""
    pass


class OperationError(PolicySearchError):
    """Raised when a numerical operation cannot complete."""
    pass


class IndexedValidationError(ValidationError):
    """Validation error pointing at a (state, action) entry of a tabular model."""

    def __init__(self, message: str, state: Optional[int] = None, action: Optional[int] = None):
        super().__init__(message)
        self.state = state
        self.action = action


class NegativeReward(IndexedValidationError):
    """Raised when a reward entry is negative."""
    pass


class RowNotStochastic(IndexedValidationError):
    """Raised when a distribution does not sum to one or has negative mass."""
    pass


class BadDiscount(ValidationError):
    """Raised when the discount factor lies outside [0, 1)."""
    pass


class DimensionMismatch(ValidationError):
    """Raised when array shapes disagree with the model dimensions."""
    pass


class ActionNotLegal(ValidationError):
    """Raised when an action is not in the legal action set of a state."""
    pass


class IllegalPlacement(ValidationError):
    """Raised when a Tetris placement cannot be made on the current board."""
    pass


class ConfigError(ValidationError):
    """Raised when an experiment configuration is malformed."""
    pass


class SingularSystem(OperationError):
    """Raised when a Bellman or flow system cannot be solved."""
    pass


class SingularTransform(OperationError):
    """Raised when a reparametrisation matrix is singular or badly conditioned."""
    pass


class NotClosedForm(OperationError):
    """Raised when a closed-form EM step is requested for a non log-quadratic policy."""
    pass


class NonAscent(OperationError):
    """Raised when no ascent direction is found after the maximum ridge doublings."""
    pass


class NonFiniteAccumulator(OperationError):
    """Raised when an estimator accumulator picks up NaN or Inf values."""
    pass


class ExplosionGuard(OperationError):
    """Raised when path enumeration would exceed the configured path limit."""
    pass


class MissingBundleField(OperationError):
    """Raised when a search-direction bundle lacks a field the method needs."""
    pass


class NoRecurrentState(OperationError):
    """Raised when the recurrent-state estimator is used on an environment without one."""
    pass


class SeedMatrixMismatch(OperationError):
    """Raised when compared experiments do not share a seed matrix."""
    pass
