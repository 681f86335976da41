"""Shared exception types mapped onto CLI exit codes."""

from __future__ import annotations


class ValidationError(ValueError):
    """Invalid geometry parameters, grid sizes, or configuration (exit 2)."""


class ConvergenceError(RuntimeError):
    """Iterative eigensolver failed to meet its tolerance (exit 3).

    Carries the best residuals reached so failures are diagnosable.
    """

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class AcceptanceError(RuntimeError):
    """A study violated one of its asserted inequalities/contracts (exit 4)."""

    def __init__(self, message: str, detail=None):
        super().__init__(message)
        self.detail = detail
