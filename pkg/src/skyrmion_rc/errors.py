"""Exception types shared across the package."""


class SkyrmionRCError(Exception):
    """Base class for all package errors."""


class StabilityViolation(SkyrmionRCError):
    """Raised when the time step is too large for the integrator."""


class GeometryError(SkyrmionRCError, ValueError):
    """Raised when a texture or grid does not fit its lattice."""


class FormatError(SkyrmionRCError, ValueError):
    """Raised for malformed data files (IDX, snapshots, feature tables)."""


class SingularSystem(SkyrmionRCError, ArithmeticError):
    """Raised when an unregularised normal-equation system is rank deficient."""


class DimensionMismatch(SkyrmionRCError, ValueError):
    pass


class SplitError(SkyrmionRCError, ValueError):
    pass


class DegenerateInput(SkyrmionRCError, ValueError):
    pass


class ConfigError(SkyrmionRCError, ValueError):
    """Raised by config validation; ``line`` points into the source file when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        msg = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {msg}"
        return msg
