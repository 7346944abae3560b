"""Exception types raised by the estimation routines."""


class GeeeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GeeeError, ValueError):
    """Input values violate a documented precondition."""


class DegreesOfFreedomError(GeeeError, ValueError):
    """A moment estimator divisor is not positive."""


class RankError(GeeeError, ValueError):
    """A design or normal-equations matrix is rank deficient."""


class NumericalError(GeeeError, ArithmeticError):
    """A root could not be bracketed or a matrix could not be inverted."""


class DimensionError(GeeeError, ValueError):
    """A cluster is larger than the working correlation supports."""
