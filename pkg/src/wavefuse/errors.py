"""Exception hierarchy shared by all wavefuse modules."""


class WaveFuseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(WaveFuseError):
    """Array shapes are inconsistent or violate a divisibility requirement."""


class ValidationError(WaveFuseError):
    """Input values are invalid (non-finite, out of range, empty)."""


class ConfigError(WaveFuseError):
    """A configuration object or run-config file is invalid."""


class DataError(WaveFuseError):
    """An input file is missing, unreadable, or malformed."""


class NumericError(WaveFuseError):
    """A numeric failure occurred (e.g. training loss diverged to NaN)."""
