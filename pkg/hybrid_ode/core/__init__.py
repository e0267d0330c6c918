"""Core configuration and utilities."""

from .config import DEFAULT_SEED, PARAM_CAP, HybridSettings, load_settings
from .exceptions import (
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    DomainError,
    GraphError,
    HybridError,
    InputError,
    NumericError,
    ShapeError,
    TrainingError,
)

__all__ = [
    "DEFAULT_SEED",
    "PARAM_CAP",
    "ConfigError",
    "ContractError",
    "DataError",
    "DivergenceError",
    "DomainError",
    "GraphError",
    "HybridError",
    "HybridSettings",
    "InputError",
    "NumericError",
    "ShapeError",
    "TrainingError",
    "load_settings",
]
