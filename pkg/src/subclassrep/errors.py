"""Exception hierarchy. The CLI maps each class to an exit code."""


class SubclassRepError(Exception):
    """Base class for all package errors."""


class DataError(SubclassRepError, ValueError):
    """Invalid input data or configuration (bad record, bad ratio, empty pool)."""


class InvariantError(SubclassRepError, RuntimeError):
    """An internal invariant failed; indicates a bug, not bad input."""


class HygieneError(InvariantError):
    """Training stages or the test set share records."""
