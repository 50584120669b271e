"""Compressed-sensing MIMO channel estimation with a learned generative prior."""
from .errors import (
    ArgumentError, ConfigError, ContractError, DegenerateError, DivergenceError, EstimationError,
    FormatError, GenchanError, NumericalError, PlotError, SizingError, UnsupportedError,
)

__version__ = "0.1.0"
