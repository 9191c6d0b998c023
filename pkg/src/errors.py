# errors.py
from typing import Optional


class SteeringError(Exception):
    """Base class for every failure raised by the steering pipeline."""
    exit_code: int = 3


class ConfigError(SteeringError, ValueError):
    """Raised when a scenario file or a command-line argument is invalid."""
    exit_code = 1


class SubproblemInfeasibleError(SteeringError):
    """Raised when the convex subproblem is reported infeasible or unbounded."""
    exit_code = 2

    def __init__(self, message: str, status: str = "infeasible", diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics or {}


class NumericalError(SteeringError):
    """Raised when a computation fails for numerical reasons."""
    exit_code = 3


class KernelRepairError(NumericalError):
    """Raised when a Gram matrix is too indefinite to be repaired."""
    pass


class ModelDomainError(NumericalError):
    """Raised when a state leaves the domain in which a model is defined."""

    def __init__(self, message: str, time: Optional[float] = None):
        self.reason = message
        if time is not None:
            message = f"{message} (t = {time:.6g} s)"
        super().__init__(message)
        self.time = time


class PropagationError(ModelDomainError):
    """Raised when the nominal propagation fails part way through."""
    pass


class CaptureError(NumericalError):
    """Raised when an exit state does not lie on a captured elliptical orbit."""
    pass


class SolverFailureError(NumericalError):
    """Raised when the solver stops without a usable solution."""

    def __init__(self, message: str, status: str = "numerical_failure"):
        super().__init__(message)
        self.status = status


class ArtifactIOError(SteeringError):
    """Raised when a policy, report or scenario file cannot be read or written."""
    exit_code = 4
