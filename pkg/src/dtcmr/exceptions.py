class DtcmrError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(DtcmrError, ValueError):
    """Invalid input or configuration (CLI exit code 2)."""


class NumericalError(DtcmrError, ArithmeticError):
    """Numerical failure: degenerate data, divergence (CLI exit code 3)."""


class RegistrationError(NumericalError):
    pass


class TrainingDiverged(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
