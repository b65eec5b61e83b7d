"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SkewGbmError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SkewGbmError, ValueError):
    """An argument lies outside the domain of the operation."""


class FitError(SkewGbmError):
    """A least-squares or likelihood fit could not be produced.

    ``best`` carries the best candidate found before giving up, if any.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class NumericError(SkewGbmError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


class QuadratureError(NumericError):
    """Quadrature ran out of refinement budget.

    ``achieved`` is the last difference between successive refinement levels.
    """

    def __init__(self, message: str, achieved: float = float("nan")):
        super().__init__(message)
        self.achieved = achieved


class IngestionError(SkewGbmError, ValueError):
    """Input file could not be parsed; ``lines`` lists offending line numbers."""

    def __init__(self, message: str, lines=()):
        super().__init__(message)
        self.lines = list(lines)
