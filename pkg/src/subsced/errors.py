"""Exception hierarchy shared by every module of the package."""


class SubscedError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SubscedError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class NonPositive(SubscedError, ValueError):
    pass


class RankDeficient(SubscedError, ValueError):
    pass


class NonPSD(SubscedError, ValueError):
    pass


class NotSymmetric(SubscedError, ValueError):
    pass


class NotPD(SubscedError, ValueError):
    pass


class NotSimultaneouslyDiagonalizable(SubscedError, ValueError):
    pass


class NonPositiveValue(SubscedError, ValueError):
    """A scedastic function returned a value <= 0 on the checking grid."""


class GRMViolation(SubscedError, ValueError):
    """A function required to satisfy the GRM property failed the grid check."""


class BadOrdering(SubscedError, ValueError):
    pass


class DegenerateCovariate(SubscedError, ValueError):
    pass


class EmptyBatch(SubscedError, ValueError):
    pass


class NotConverged(SubscedError, RuntimeError):
    """Raised by iterative fits that exhaust their iteration budget.

    The best iterate is attached as ``result`` so callers can still use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateScale(SubscedError, RuntimeError):
    pass


class SingularHessian(SubscedError, ValueError):
    pass


class LeverageOne(SubscedError, ValueError):
    pass


class InvalidSpec(SubscedError, ValueError):
    pass
