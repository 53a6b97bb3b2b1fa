"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line runner maps it to.
"""


class AgeDiffusionError(Exception):
    exit_code = 3


class ArgumentError(AgeDiffusionError, ValueError):
    """Invalid argument or violated precondition."""

    exit_code = 2


class AlignmentError(ArgumentError):
    """A time or age value does not sit on the characteristic grid."""


class DomainError(ArgumentError):
    """An input vector lies outside the required operator domain."""


class ValidationError(ArgumentError):
    """Scenario parameters violate a structural inequality."""


class SpectralPointError(AgeDiffusionError, ArithmeticError):
    """A resolvent was requested at a point where it does not exist."""


class ConvergenceError(AgeDiffusionError, ArithmeticError):
    """A limiting or refinement process failed to settle.

    ``history`` holds the successive residuals that triggered the failure.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class BoundViolationError(ConvergenceError):
    """A computed quantity broke an a-priori bound it must satisfy."""
