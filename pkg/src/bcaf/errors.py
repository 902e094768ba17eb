"""Exception types shared across the package."""


class BcafError(Exception):
    """Base class for all package errors."""


class ShapeError(BcafError):
    """Operand shapes are inconsistent with the operation."""


class MaskError(BcafError):
    """A mask leaves no valid entries where at least one is required."""


class NumericError(BcafError):
    """A value is outside the numeric domain of the operation."""


class GraphError(BcafError):
    """Misuse of the autodiff graph (e.g. backward called twice)."""


class ConfigError(BcafError):
    """Invalid or inconsistent configuration."""


class FormatError(BcafError):
    """A binary file does not conform to its on-disk format."""


class ValidationError(BcafError):
    """Dataset contents violate a documented invariant."""
