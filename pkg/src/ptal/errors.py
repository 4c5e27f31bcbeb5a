"""Exception hierarchy shared by every stage."""


class PTALError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PTALError, ValueError):
    """Array shapes or model dimensions do not agree."""


class ConfigError(PTALError, ValueError):
    """A configuration value is invalid or infeasible."""


class AnnotationError(PTALError, ValueError):
    """Labels are missing or refer to an invalid class."""


class NumericError(PTALError, ArithmeticError):
    """Non-finite values reached an optimizer or loss."""


class TrainingError(PTALError, RuntimeError):
    """Training diverged or failed to reach its target."""


class CheckpointError(PTALError, ValueError):
    """A model file is malformed or inconsistent."""
