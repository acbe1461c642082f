"""Exception types shared across the package."""


class AncovaError(Exception):
    """Base class for all errors raised by this package."""


class SingularDesign(AncovaError):
    """The design matrix has linearly dependent columns (X'X not positive definite)."""


class ConditioningFailure(AncovaError):
    """A derived covariance quantity is not usable (non-positive or non-finite)."""


class DomainError(AncovaError, ValueError):
    """An argument is outside the domain a function is defined on."""


class InsufficientLowCPPoints(AncovaError):
    """Too few low-coverage grid points to fit a line locus."""
