"""Exception hierarchy. CLI exit codes key off the two base classes."""


class HydrocarError(Exception):
    pass


class ValidationError(HydrocarError, ValueError):
    """Bad input data; the CLI maps it to exit code 2."""


class NumericalError(HydrocarError, ArithmeticError):
    """Numerical failure; the CLI maps it to exit code 3."""


class NetworkError(ValidationError):
    def __init__(self, message, node=None, row=None):
        super().__init__(message)
        self.node = node
        self.row = row


class NotPositiveDefiniteError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
