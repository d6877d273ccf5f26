"""Exception hierarchy shared by all modules."""


class TrialOfferError(Exception):
    """Base class for errors raised by trialoffer."""


class DomainError(TrialOfferError, ValueError):
    """Input lies outside the domain where a formula or closed form is valid."""


class ShapeError(TrialOfferError, ValueError):
    """Array shapes or structural preconditions do not match."""


class ZeroIntensity(TrialOfferError, ArithmeticError):
    """No item can be purchased at the given market share."""


class ZeroColumn(TrialOfferError, ArithmeticError):
    """An item has zero total spending but can still be tried."""


class NoConvergence(TrialOfferError, RuntimeError):
    """Iterative solver stopped at max_iter above tolerance.

    The best iterate is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(TrialOfferError, ValueError):
    """Configuration file is malformed. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ParseError(TrialOfferError, ValueError):
    """Input file could not be parsed; ``row`` and ``column`` locate the problem."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class RangeError(TrialOfferError, ValueError):
    """Numeric input is outside its permitted range."""
