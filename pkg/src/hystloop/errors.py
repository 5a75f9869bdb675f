"""Exception hierarchy shared by all hystloop modules."""

from __future__ import annotations


class HystloopError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(HystloopError, ValueError):
    """An argument or configuration value violates its contract.

    ``field`` names the offending parameter so that CLI messages can point at it.
    """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class DegenerateSignalError(HystloopError, ValueError):
    """A metric was requested on an all-zero (or numerically zero) signal."""


class NumericError(HystloopError, ArithmeticError):
    """Non-finite input or state encountered during a simulation step."""

    def __init__(self, message: str, step: int | None = None) -> None:
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class ConfigurationError(HystloopError):
    """Operation requested on an object that was not configured for it."""


class StateError(HystloopError):
    """Operation called with insufficient accumulated state (e.g. history)."""


class DivergenceError(HystloopError):
    """Closed-loop run blew up; carries the step index and partial traces."""

    def __init__(self, step: int, message: str, partial: dict | None = None) -> None:
        super().__init__(f"diverged at step {step}: {message}")
        self.step = step
        self.partial = partial or {}
