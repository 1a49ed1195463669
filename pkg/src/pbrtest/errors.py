"""Exception types shared across the package."""


class PbrError(Exception):
    """Base class for all package errors."""


class ValidationError(PbrError):
    """Input data or configuration failed validation."""


class UnsupportedScenario(ValidationError):
    """Operation only supports the (2,2,2) Bell scenario."""


class ZeroCountSetting(ValidationError):
    """A measurement setting has zero counts and the uniform fallback is disabled."""


class BadSplit(ValidationError):
    """Train/test split parameters leave one side empty or out of range."""


class SolverFailure(PbrError):
    """A conic/LP solve did not reach an acceptable status."""

    def __init__(self, message: str, status: str | None = None):
        super().__init__(message)
        self.status = status


class NumericalDegeneracy(PbrError):
    """Input is too degenerate for a stable solve (e.g. empty-support setting)."""


class SupportMismatch(PbrError):
    """Projection minimizer vanishes on a cell where the frequencies do not."""
