"""Exception types raised across the package."""


class SheetZeroError(Exception):
    """Base class for all package errors."""


class SizingError(SheetZeroError, MemoryError):
    """A lattice would exceed the configured memory budget."""

    def __init__(self, required_bytes: int, budget_bytes: int):
        self.required_bytes = int(required_bytes)
        self.budget_bytes = int(budget_bytes)
        super().__init__(
            f"lattice needs {self.required_bytes} bytes, budget is {self.budget_bytes} bytes"
        )


class RangeError(SheetZeroError, ValueError):
    """A parameter lies outside the range the operation supports."""


class DomainError(SheetZeroError, ValueError):
    """An input lies outside the mathematical domain of a map or formula."""


class ChartError(SheetZeroError, ValueError):
    """A projection or subspace is not admissible for the requested chart."""


class ResolutionError(SheetZeroError, ValueError):
    """A requested level is finer than the underlying field."""


class ConfigError(SheetZeroError, ValueError):
    """Malformed or inconsistent configuration."""


class RegimeError(ConfigError):
    """Parameters fall outside the dimensional regime a harness is valid for."""


class EmptyTrace(SheetZeroError):
    """A line or fiber does not meet the analysis window."""
