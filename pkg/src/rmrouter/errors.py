"""Exception types shared across the package."""


class RouterError(Exception):
    """Base class for all rmrouter errors."""


class ConfigError(RouterError):
    """Invalid configuration value or inconsistent setup."""


class DimError(RouterError):
    """Mismatched array shapes or dimensions."""


class InputError(RouterError):
    """Invalid runtime input (missing label, unknown id, empty batch, ...)."""


class FormatError(RouterError):
    """Malformed or unreadable file content."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class NumericalError(RouterError):
    """Numerical failure: singular system, failed factorization, non-finite value."""


class NonPSDError(NumericalError):
    """Matrix required to be positive definite is not."""

    def __init__(self, message: str, pivot: int | None = None):
        if pivot is not None:
            message = f"{message} (Cholesky pivot {pivot} failed)"
        super().__init__(message)
        self.pivot = pivot


class TrainError(RouterError):
    """Training cannot proceed (for example, no ranking signal in the data)."""


class InvariantError(RouterError):
    """A recorded run violates one of its bookkeeping invariants."""

