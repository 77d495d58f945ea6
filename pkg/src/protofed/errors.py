"""Exception types shared across the package."""


class ProtofedError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ProtofedError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ProtofedError):
    """A computation produced a non-finite value (NaN or Inf)."""


class LayoutError(ProtofedError):
    """Parameter names or shapes do not match the expected layout."""


class ConfigError(ProtofedError):
    """A configuration value or key is invalid."""


class DataError(ProtofedError):
    """Dataset contents violate a structural requirement."""


class ParseError(ProtofedError):
    """A text file could not be parsed; message carries file/row/column."""


class TrainingError(ProtofedError):
    """A local update diverged; message carries round and client id."""
