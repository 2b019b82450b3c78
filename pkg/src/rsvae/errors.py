"""Exception types shared across the package."""


class RsvaeError(Exception):
    """Base class for all errors raised by rsvae."""


class ShapeError(RsvaeError, ValueError):
    """Array dimensions do not agree with what an operation expects."""


class CapacityError(RsvaeError, ValueError):
    """Not enough classes/samples/points for the requested operation."""


class NumericError(RsvaeError, ArithmeticError):
    """A NaN or Inf showed up where a finite value is required."""


class ContractError(RsvaeError, ValueError):
    """An argument violates a documented precondition."""


class UnknownClassError(RsvaeError, KeyError):
    """A class id is not present in the data or table being queried."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown class"


class FormatError(RsvaeError, ValueError):
    """A binary file is malformed.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
