"""Exception types shared across the package."""


class TsdError(Exception):
    pass


class DimensionError(TsdError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(TsdError, ValueError):
    """An argument is outside its admissible range."""


class NumericError(TsdError, ArithmeticError):
    """Non-finite values were produced or supplied."""


class FormatError(TsdError, ValueError):
    """A binary file is malformed. ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
