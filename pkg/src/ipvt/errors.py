"""Exception types shared across the package."""


class IPVTError(Exception):
    """Base class for all errors raised by ipvt."""


class InvalidArgument(IPVTError, ValueError):
    """A parameter is outside the domain of an operation."""


class DecompositionFailure(IPVTError, ArithmeticError):
    """A matrix factorization could not be computed (numerically singular input)."""


class NumericFailure(IPVTError, ArithmeticError):
    """A quadrature or iterative computation failed to converge."""


class ResourceLimit(IPVTError, RuntimeError):
    """A requested enumeration exceeds the configured size cap."""


class UncertifiedCells(IPVTError, RuntimeError):
    """Some points lie in cells whose assignment is not certified exact."""
