"""Exception hierarchy for toricray; each class knows the CLI exit code it maps to."""

from __future__ import annotations


class ToricRayError(Exception):
    """Base class for every error raised by toricray."""

    exit_code = 3


class ConfigError(ToricRayError):
    """Invalid or unreadable experiment configuration."""

    exit_code = 2


class DomainError(ToricRayError, ValueError):
    """Input outside the domain an operation is defined on."""

    exit_code = 2


class GridError(DomainError):
    """Malformed grid: bad box, too few nodes, non-finite values."""


class ConvexityError(DomainError):
    """Convexity required but violated; ``witness`` holds the offending node or cell."""

    def __init__(self, message: str, witness: tuple[int, ...] | None = None) -> None:
        super().__init__(message)
        self.witness = witness


class NumericalError(ToricRayError):
    """Iteration failed to converge or the discretization cannot resolve the request."""

    def __init__(self, message: str, residual: float | None = None) -> None:
        super().__init__(message)
        self.residual = residual
