"""Exception types shared across the library."""


class GpiError(Exception):
    """Base class for all library errors."""


class UsageError(GpiError, ValueError):
    """A caller violated an operation's contract (bad arguments, bad state)."""


class NonEpisodicModelError(GpiError):
    """Policy evaluation with gamma=1 hit a recurrent, non-absorbing chain."""


class ConvergenceError(GpiError):
    """An iterative solver hit its sweep cap before reaching tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class NumericalError(GpiError):
    """NaN or inf appeared in a loss or gradient; the update was aborted."""


class ConfigError(GpiError, ValueError):
    """Malformed or invalid run configuration."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key
