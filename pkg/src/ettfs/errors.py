"""Exception types raised across the package."""


class EttfsError(Exception):
    """Base class for all package errors."""


class ShapeError(EttfsError, ValueError):
    """Operand shapes do not compose."""


class ConfigError(EttfsError, ValueError):
    """Invalid configuration value (time-steps, thresholds, layer geometry)."""


class NumericError(EttfsError, FloatingPointError):
    """NaN/inf encountered or a degenerate numeric state."""


class UsageError(EttfsError, RuntimeError):
    """API misuse, e.g. backward() on a non-scalar."""


class ArchParseError(EttfsError, ValueError):
    """Malformed architecture string. ``position`` is the character offset."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class FormatError(EttfsError, ValueError):
    """Malformed dataset file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class CheckpointError(EttfsError, ValueError):
    """Checkpoint magic/version/blob mismatch."""
