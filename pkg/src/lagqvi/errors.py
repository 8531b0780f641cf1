"""Exception types shared across the package.

Each class maps to one CLI exit code so scripts can tell failures apart.
"""

from __future__ import annotations


class LagQviError(Exception):
    exit_code = 1


class ConfigError(LagQviError, ValueError):
    """Malformed or degenerate configuration."""

    exit_code = 3

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class HypothesisError(LagQviError):
    """A sampled standing-assumption check failed."""

    exit_code = 2

    def __init__(self, message: str, clauses: list[str] | None = None):
        super().__init__(message)
        self.clauses = clauses or []


class SchemeError(LagQviError):
    """The discrete operator lost monotonicity or a fixed point diverged."""


class MissingArtifactError(LagQviError, FileNotFoundError):
    exit_code = 4


class AdmissibilityError(LagQviError):
    """An impulse violated the decision-lag or cone constraints."""

    exit_code = 5
