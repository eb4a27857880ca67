"""Exception hierarchy shared by all modules."""


class RmtSslError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(RmtSslError, ValueError):
    """Invalid argument value or shape."""


class UnsupportedError(ArgumentError):
    """Operation not defined for the given configuration (e.g. K != 2)."""


class FormatError(RmtSslError):
    """Malformed input file."""


class CapacityError(RmtSslError):
    """Not enough samples available to honour a request."""


class ConsistencyError(RmtSslError):
    """Two inputs that must agree do not."""


class ConfigError(RmtSslError):
    """Experiment configuration cannot be parsed or validated."""


class NumericError(RmtSslError, ArithmeticError):
    """Non-finite or otherwise unusable numerical result."""


class DegeneracyError(NumericError):
    """Non-positive node degree; fractional powers of D are undefined."""


class SolverError(NumericError):
    """Linear system is singular to working precision."""


class ConvergenceError(NumericError):
    """Iterative scheme stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IllConditionedError(NumericError):
    """A quantity used as a divisor is too close to zero."""
