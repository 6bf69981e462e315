"""Exception types shared across the package."""


class RiskBOError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(RiskBOError, ValueError):
    pass


class NumericalError(RiskBOError, ArithmeticError):
    """Raised when a factorization fails after the jitter schedule is exhausted."""

    def __init__(self, message, matrix_name=None):
        super().__init__(message)
        self.matrix_name = matrix_name


class ConfigError(RiskBOError, ValueError):
    pass


class BudgetExhaustedError(RiskBOError):
    def __init__(self, remaining, needed):
        super().__init__(f"budget exhausted: {remaining} evaluations remaining, {needed} needed")
        self.remaining = remaining
        self.needed = needed


class SimulatorError(RiskBOError):
    """External simulator failure (non-zero exit, timeout, crash)."""

    def __init__(self, message, stderr=""):
        super().__init__(message if not stderr else f"{message}\n--- simulator stderr ---\n{stderr}")
        self.stderr = stderr


class ProtocolError(SimulatorError):
    """The simulator wrote a response that does not follow the line protocol."""


class ResultParseError(RiskBOError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
