"""Optimal position management for a market maker under price impact and random order flow."""

__version__ = "0.1.0"

from .errors import AssumptionViolation, ConfigError, MMStratError, NumericalError
from .grid import TimeGrid
from .model import build_model, load_config

__all__ = ["AssumptionViolation", "ConfigError", "MMStratError", "NumericalError", "TimeGrid",
           "build_model", "load_config", "__version__"]
