"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class ArgumentError(ValueError):
    """An argument is outside the operation's accepted domain."""


class NumericError(ArithmeticError):
    """A numeric guard fired (NaN input, degenerate filter, zero energy)."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class DataFormatError(ValueError):
    """A file (CSV, checkpoint) is malformed or truncated."""


class ParseError(DataFormatError):
    """A cell or field failed to parse; carries row/column context."""
