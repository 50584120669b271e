"""Exception types shared across the package."""


class GenchanError(Exception):
    """Base class for all library errors."""


class ArgumentError(GenchanError, ValueError):
    """Invalid argument (shape, length, or value)."""


class ConfigError(GenchanError, ValueError):
    """Invalid configuration."""


class SizingError(GenchanError, ValueError):
    """Requested array would exceed the configured element budget."""


class UnsupportedError(GenchanError, NotImplementedError):
    pass


class FormatError(GenchanError):
    """Malformed, truncated or mismatched binary file."""


class ContractError(GenchanError, RuntimeError):
    """An API contract was violated (e.g. a tape replayed twice)."""


class NumericalError(GenchanError, ArithmeticError):
    """Non-convergence or non-finite values.

    ``iterations`` carries the iteration count at failure, when known.
    """

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DegenerateError(NumericalError):
    """Input is degenerate for the requested quantity (e.g. zero channel)."""


class DivergenceError(NumericalError):
    pass


class EstimationError(NumericalError):
    """Every restart of an estimator failed."""


class PlotError(GenchanError, ValueError):
    """A table lacks the data a plot needs."""
