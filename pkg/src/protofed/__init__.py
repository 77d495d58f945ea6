"""protofed: deterministic multimodal federated learning with prototype alignment."""

__version__ = "0.1.0"

from . import autodiff, config, datagen, fedsim, losses, metrics, models, prototypes
from .errors import (
    ConfigError, DataError, LayoutError, NumericError, ParseError,
    ProtofedError, ShapeError, TrainingError,
)

__all__ = [
    "autodiff", "config", "datagen", "fedsim", "losses", "metrics", "models",
    "prototypes",
    "ProtofedError", "ShapeError", "NumericError", "LayoutError", "ConfigError",
    "DataError", "ParseError", "TrainingError", "__version__",
]
