"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RegretDissectError(Exception):
    """Base class for all package errors."""


class DomainError(RegretDissectError, ValueError):
    """A parameter or sample point lies outside its admissible set."""


class SolverError(RegretDissectError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConditioningError(RegretDissectError, ArithmeticError):
    """A matrix that must be inverted is singular or numerically indefinite."""


class PreconditionError(RegretDissectError, ValueError):
    """A hypothesis required by a bound does not hold for the supplied inputs."""


class RegionError(RegretDissectError, ValueError):
    """The threshold falls in a region where no bound is available."""


class ExperimentError(RegretDissectError, RuntimeError):
    """A Monte Carlo experiment failed its quality checks."""


class ConfigError(RegretDissectError, ValueError):
    """A configuration file could not be parsed or validated."""
