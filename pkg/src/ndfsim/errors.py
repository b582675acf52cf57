"""Exception types shared across the package."""


class NdfError(Exception):
    """Base class for package errors."""


class ConfigurationError(NdfError, ValueError):
    """Invalid configuration: shapes, unknown kinds, bad parameter ranges."""


class DomainError(NdfError, ValueError):
    """A coordinate or parameter lies outside its admissible domain."""


class TapeDomainError(DomainError):
    """Math domain violation while recording a tape node."""

    def __init__(self, message, node):
        super().__init__(f"{message} (node {node})")
        self.node = node


class DegenerateSurfaceError(NdfError, ArithmeticError):
    """Tangent vectors are (numerically) parallel."""


class NumericAbort(NdfError, FloatingPointError):
    """Training produced a non-finite value; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class CheckpointMismatch(NdfError, ValueError):
    """Checkpoint header does not match the requested configuration."""
