"""Exception hierarchy shared by the library and the CLI."""


class KdeGraphError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class DataError(KdeGraphError, ValueError):
    """Malformed input data or a dataset inconsistent with the declared tau."""


class ParseError(DataError):
    pass


class ContractError(KdeGraphError, ValueError):
    """A caller violated a documented precondition."""

    exit_code = 2


class UnsupportedTransformError(ContractError):
    pass


class TauInconsistencyError(DataError):
    """Estimates went nonpositive where the tau parameterization forbids it."""


class EnvelopeError(KdeGraphError):
    """Rejection sampling found an acceptance ratio above one."""


class CalibrationError(KdeGraphError):
    pass


class BudgetError(KdeGraphError):
    pass


class ConvergenceError(KdeGraphError):
    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
