"""Exception hierarchy shared by the solvers, the CLI and the HTTP service."""


class RephaseError(Exception):
    pass


class DomainError(RephaseError, ValueError):
    """Invalid problem input (non-positive scales, |phase| > pi, chi <= 0, ...)."""


class IntegrationError(RephaseError):
    def __init__(self, message, last_parameter=None, last_state=None):
        super().__init__(message)
        self.last_parameter = last_parameter
        self.last_state = last_state


class QuadratureError(RephaseError):
    def __init__(self, message, estimate=None, abserr=None):
        super().__init__(message)
        self.estimate = estimate
        self.abserr = abserr


class RootFindError(RephaseError):
    pass


class NonConvergenceError(RephaseError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class SingularControlError(RephaseError):
    pass


class DynamicsDomainError(RephaseError):
    pass


class InfeasibleProblemError(RephaseError):
    def __init__(self, message, min_delta_L=None):
        super().__init__(message)
        self.min_delta_L = min_delta_L


class ContinuationError(RephaseError):
    def __init__(self, message, last_solution=None, last_epsilon=None):
        super().__init__(message)
        self.last_solution = last_solution
        self.last_epsilon = last_epsilon


class ValidationStageError(RephaseError):
    """A solver failure inside one stage of the linear -> nonlinear validation pipeline."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class AtlasFormatError(RephaseError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


# Exceptions that mean "the numerics failed" rather than "the input was wrong"
SOLVER_ERRORS = (
    IntegrationError,
    QuadratureError,
    RootFindError,
    NonConvergenceError,
    SingularControlError,
    DynamicsDomainError,
    ContinuationError,
    ValidationStageError,
)
