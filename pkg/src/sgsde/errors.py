"""Exception hierarchy.

Validation errors (bad configuration, violated preconditions) and numerical
errors (divergence, non-convergence) are kept apart so the command line can
map them to different exit codes.
"""


class SGSDEError(Exception):
    """Base class for all package errors."""

    exit_code = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class ValidationError(SGSDEError):
    """Misconfiguration or violated precondition."""

    exit_code = 1


class ConfigurationError(ValidationError):
    pass


class LipschitzError(ValidationError):
    pass


class MonotonicityError(ValidationError):
    pass


class GridError(ValidationError):
    pass


class PathRangeError(ValidationError):
    """A requested time window is not covered by the noise path."""


class SmallGainError(ValidationError):
    """The small-gain hypotheses fail, so the fixed-point solver refuses to run."""


class NumericalError(SGSDEError):
    exit_code = 2


class EigenvalueError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
