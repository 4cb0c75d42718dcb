"""
Exception hierarchy for mirk-hnn.

Library code raises these; only the command-line layer catches them and maps
them to exit codes (1 for invalid input, 2 for numerical failures).
Errors carrying extra fields pickle with them, so they cross process-pool
boundaries intact.
"""

from typing import Optional


class MirkHnnError(Exception):
    """Root of all errors raised by this package."""


class InvalidArgumentError(MirkHnnError, ValueError):
    """Raised on shape, dimension, grid or configuration mismatches."""


class NumericalError(MirkHnnError, ArithmeticError):
    """Base class for failures of the numerical machinery."""


class NumericalOverflowError(NumericalError):
    """
    A non-finite value was produced.

    Parameters
    ----------
    message : str
        Human readable description
    stage : Optional[int]
        Index of the Runge-Kutta stage that produced the value, if known
    transition : Optional[int]
        Index n of the data transition y(t_n) -> y(t_{n+1}), if known
    """

    def __init__(self, message: str, stage: Optional[int] = None, transition: Optional[int] = None):
        super().__init__(message)
        self.stage = stage
        self.transition = transition

    def __reduce__(self):
        return self.__class__, (str(self), self.stage, self.transition)


class NoConvergenceError(NumericalError):
    """Fixed-point iteration hit its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

    def __reduce__(self):
        return self.__class__, (str(self), self.residual, self.iterations)


class StiffnessError(NumericalError):
    """The adaptive solver could not keep its step size above the underflow limit."""

    def __init__(self, message: str, t_reached: float):
        super().__init__(message)
        self.t_reached = t_reached

    def __reduce__(self):
        return self.__class__, (str(self), self.t_reached)


class DivergenceError(NumericalError):
    """A rollout left the admissible region of state space."""

    def __init__(self, message: str, step: int, norm: float):
        super().__init__(message)
        self.step = step
        self.norm = norm

    def __reduce__(self):
        return self.__class__, (str(self), self.step, self.norm)


class UnreliableFitError(NumericalError):
    """An order fit was requested on errors that sit below the noise floor."""

    def __init__(self, message: str, h: float, error: float):
        super().__init__(message)
        self.h = h
        self.error = error

    def __reduce__(self):
        return self.__class__, (str(self), self.h, self.error)
