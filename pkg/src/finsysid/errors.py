"""Exception hierarchy.

Everything except :class:`ConfigError` is a domain/contract failure (CLI exit
status 1); configuration problems map to exit status 2.
"""


class FinSysIdError(Exception):
    """Base class for all library errors."""


class DimensionError(FinSysIdError, ValueError):
    pass


class ContractError(FinSysIdError, ValueError):
    pass


class SingularityError(FinSysIdError, ArithmeticError):
    pass


class NumericError(FinSysIdError, ArithmeticError):
    pass


class ExcitationError(FinSysIdError, ArithmeticError):
    """A covariance that must be strictly positive definite is not."""


class CapacityError(FinSysIdError, RuntimeError):
    pass


class EvaluationError(FinSysIdError, ValueError):
    pass


class RateError(FinSysIdError, ValueError):
    pass


class ConvergenceError(FinSysIdError, RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class ConfigError(FinSysIdError):
    pass
