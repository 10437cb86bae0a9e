"""Exception types shared across the package."""


class SwinFreeError(Exception):
    """Base class for all package errors."""


class ConfigError(SwinFreeError, ValueError):
    """A configuration violates a geometric or structural constraint."""


class DimensionError(SwinFreeError, ValueError):
    """Tensor extents do not agree."""


class FormatError(SwinFreeError, IOError):
    """A weight archive or tensor blob is malformed."""
