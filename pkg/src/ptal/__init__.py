"""Point-level temporal action localization on feature sequences."""

from .errors import (AnnotationError, CheckpointError, ConfigError, DimensionError, NumericError,
                     PTALError, TrainingError)

__version__ = "0.1.0"

__all__ = [
    "PTALError",
    "DimensionError",
    "ConfigError",
    "AnnotationError",
    "NumericError",
    "TrainingError",
    "CheckpointError",
]
