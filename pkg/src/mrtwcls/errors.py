"""Exception types shared across the package.

Every failure raised by library code derives from :class:`EstimationError`,
so callers (and the CLI) can distinguish analysis failures from bugs.
Configuration problems raise :class:`ConfigError`, which the CLI maps to a
different exit code than module errors.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EstimationError):
    """A configuration file is missing, unparsable, or names invalid fields."""


# data ingestion ---------------------------------------------------------

class MissingColumn(EstimationError):
    """The schema names a column that is absent from the input file."""


class RaggedPanel(EstimationError):
    """Individuals differ in occasion count, or occasions are not contiguous."""


class InvariantViolation(EstimationError):
    """A data invariant fails (non-binary flags, treated-while-unavailable, missing values)."""


class ParseError(EstimationError):
    """A cell that must be numeric could not be parsed."""


class FeatureEvaluationError(EstimationError):
    """A feature expression cannot be evaluated (unknown column, undeclared lag initial value)."""


# probability models -----------------------------------------------------

class Separation(EstimationError):
    """Logistic coefficients diverged; the data are (quasi-)separated."""


class RankDeficient(EstimationError):
    """The normal-equation matrix of a probability model fit is singular."""


class NonConvergence(EstimationError):
    """The iteration cap was reached before the convergence tolerance."""


class Degenerate(EstimationError):
    """An estimated probability landed exactly on 0 or 1 (positivity violated)."""


class PositivityError(EstimationError):
    """An evaluated probability fell outside the positivity guard band."""


# estimators -------------------------------------------------------------

class SingularSystem(EstimationError):
    """The weighted cross-product matrix is not invertible.

    Carries the condition number observed at failure.
    """

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class DimensionMismatch(EstimationError):
    """A nuisance report's dimensions do not match the model it is paired with."""


class SingularLeverage(EstimationError):
    """(I - H_ii) is not invertible for some person in the leverage correction."""


class DegreesOfFreedomExhausted(EstimationError):
    """Too few individuals for the requested test (n <= p + q)."""


class NonPositiveDefiniteCorrelation(EstimationError):
    """A working correlation matrix is not positive definite."""
