"""Exception hierarchy; the CLI maps each category to an exit code."""
from __future__ import annotations



class MfkeError(Exception):
    """Base class for all package errors."""


class DomainError(MfkeError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigError(MfkeError, ValueError):
    """A run configuration failed to parse or validate."""


class NumericalAbort(MfkeError, RuntimeError):
    """A simulation produced non-finite values and was stopped."""


class OracleInstability(MfkeError, RuntimeError):
    """A finite-difference oracle refused an unstable step size."""

    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class QuadratureError(MfkeError, RuntimeError):
    """Adaptive quadrature in an oracle failed to converge."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
