"""Exception hierarchy shared by the solver, stepper and harness."""

from __future__ import annotations


class RISError(Exception):
    """Base class for all errors raised by incremin."""


class IllPosedProblem(RISError):
    """An energy or gradient evaluation produced a nonfinite value."""


class InfeasibleTau(RISError, ValueError):
    pass


class NoConvergence(RISError):
    """The inner solver hit its iteration cap.

    The best iterate and its residuals are kept so the caller can inspect them.
    """

    def __init__(self, message, best=None, residuals=None, step=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals
        self.step = step


class Unbounded(RISError):
    pass


class StallLimitExceeded(RISError):
    def __init__(self, message, step=None, run_length=None):
        super().__init__(message)
        self.step = step
        self.run_length = run_length


class DegenerateTrajectory(RISError):
    pass


class OutOfRange(RISError, ValueError):
    pass


class DimensionMismatch(RISError, ValueError):
    pass
