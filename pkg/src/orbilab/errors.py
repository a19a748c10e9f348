"""Exception types shared across modules."""


class OrbilabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(OrbilabError, ValueError):
    pass


class DimensionMismatchError(OrbilabError, ValueError):
    pass


class InsufficientSamplesError(OrbilabError, ValueError):
    pass


class EigenSolverError(OrbilabError, ArithmeticError):
    pass


class StepSizeError(OrbilabError, ArithmeticError):
    pass


class BudgetExceededError(OrbilabError, RuntimeError):
    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count
