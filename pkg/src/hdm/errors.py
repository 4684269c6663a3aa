"""Exception hierarchy shared by every module."""


class HDMError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class InvalidParams(HDMError, ValueError):
    exit_code = 1


class DimensionMismatch(HDMError, ValueError):
    exit_code = 1


class SingularOperator(HDMError, ArithmeticError):
    pass


class NotPositiveDefinite(HDMError, ArithmeticError):
    pass


class CursorUnderflow(HDMError, IndexError):
    pass


class DivergenceDetected(HDMError, ArithmeticError):
    pass


class DegenerateCovariance(HDMError, ArithmeticError):
    pass


class InvalidDistribution(HDMError, ValueError):
    exit_code = 1
