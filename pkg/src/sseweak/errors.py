"""Exception hierarchy shared by the numerical modules and the CLI."""


class NumericalError(RuntimeError):
    """Base class for failures of a numerical procedure (CLI exit code 2)."""


class SingularMatrixError(NumericalError):
    """A pivot fell below the singularity threshold during LU factorization."""


class StepError(NumericalError):
    """A general-SDE step produced non-finite values."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class DegenerateStepError(StepError):
    """The pre-projection vector of an SSE step vanished or became non-finite."""


class ReferenceSolverError(NumericalError):
    """The master-equation integrator failed to reach the requested times."""
