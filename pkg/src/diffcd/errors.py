"""Exception hierarchy shared across the package."""


class DiffcdError(Exception):
    """Base class for all package errors."""


class ShapeError(DiffcdError, ValueError):
    """Operand dimensions are incompatible."""


class ContractError(DiffcdError, ValueError):
    """A documented precondition was violated."""


class DataError(DiffcdError, ValueError):
    """Malformed or inconsistent input data."""


class TrainingError(DiffcdError, RuntimeError):
    """Numeric failure during optimization (NaN loss, bad gradients)."""
