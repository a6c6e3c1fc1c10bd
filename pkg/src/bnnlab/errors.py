"""Shared exception types; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Bad configuration (exit code 2)."""


class DataError(ValueError):
    """Missing or malformed data (exit code 3)."""


class NumericalError(RuntimeError):
    """Numerical failure: divergence, indefinite Hessian, ... (exit code 4)."""


class TrainingDiverged(NumericalError):
    """Non-finite objective during training; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
