"""Exception hierarchy shared by every module."""


class SeptensorError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SeptensorError, ValueError):
    pass


class OutOfDomainError(SeptensorError, ValueError):
    """A coordinate lies outside the box domain.

    ``indices`` lists the offending rows when raised from a batch call.
    """

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class ConfigurationError(SeptensorError, ValueError):
    pass


class ConditioningError(ConfigurationError):
    pass


class AssemblyError(SeptensorError, ArithmeticError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class SingularMatrixError(SeptensorError, ArithmeticError):
    pass


class SolverError(SeptensorError, ArithmeticError):
    def __init__(self, message, dim=None, mode=None):
        super().__init__(message)
        self.dim = dim
        self.mode = mode


class TrainingError(SeptensorError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class OracleError(SeptensorError, ArithmeticError):
    pass


class UndefinedMetricError(SeptensorError, ArithmeticError):
    pass


class UnsupportedError(SeptensorError, NotImplementedError):
    pass


class FormatError(SeptensorError, ValueError):
    pass
