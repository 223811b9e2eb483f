"""Holds the exception types raised on numerical and configuration failures"""
from typing import Optional


class NumericalFailure(ArithmeticError):
    """An iterative numerical procedure failed to produce an acceptable result.

    Parameters
    ----------
    message: str
        The failure description.
    residual: Optional[float] = None
        The last residual norm observed before giving up, when one exists.
    """

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class IndexViolation(NumericalFailure):
    """The algebraic Jacobian ∂g/∂z is singular, so the system is not index-1 at the point"""


class StepFailure(NumericalFailure):
    """A reference-solver step could not be completed"""

    def __init__(self, message: str, time: float, residual: Optional[float] = None):
        super().__init__(message, residual=residual)
        self.time = time


class TrainingDivergence(NumericalFailure):
    """The optimizer met a non-finite gradient"""

    def __init__(self, message: str, epoch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch


class RolloutDivergence(NumericalFailure):
    """A trained surrogate produced a non-finite prediction during a rollout"""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class NotADAEError(ValueError):
    """A descriptor-form mass matrix has full rank, hence the system is an ODE"""


class AmbiguousRankError(ValueError):
    """The numerical rank of a descriptor-form mass matrix cannot be decided reliably"""


class ConfigError(ValueError):
    """A configuration document is malformed.

    Parameters
    ----------
    message: str
        The diagnostic.
    field: Optional[str] = None
        The dotted path of the offending field, e.g. `train.beta`.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class DegenerateDenominatorError(ZeroDivisionError):
    """A relative error was requested against a reference with zero norm"""

    def __init__(self, state: str):
        super().__init__(f"Reference trajectory of state `{state}` has zero L2 norm")
        self.state = state
