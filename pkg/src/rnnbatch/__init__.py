"""Mini-batch training and inference strategies for stateful GRUs on daily time series."""

from .errors import ConfigError, DivergenceError, ParseError
from .gru import GruModel, init_params

__version__ = "0.1.0"
__all__ = ["ConfigError", "DivergenceError", "GruModel", "ParseError", "init_params"]
