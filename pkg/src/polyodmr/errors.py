"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class StepSizeError(InvalidInputError):
    """Integration step too coarse for the fastest frequency in the problem."""


class OutOfRangeError(InvalidInputError):
    """A query lies outside the calibrated range of a table."""


class FitConvergenceError(RuntimeError):
    """Peak fit did not converge or found no significant peak.

    ``best`` carries the best-so-far fits (possibly empty).
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = list(best or [])


class NoConfidentEstimateError(RuntimeError):
    """Field inversion residual above threshold; ``best`` is the top candidate."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
