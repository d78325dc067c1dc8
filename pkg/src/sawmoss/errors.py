"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class SawmossError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SawmossError):
    """Invalid or inconsistent run configuration."""


class InputError(SawmossError):
    """Malformed or missing input data (files, arrays, metadata)."""


class DomainError(SawmossError):
    """Argument outside the supported domain of a numerical routine."""


class QuadratureError(SawmossError):
    """Numerical integration failed to reach the requested accuracy."""


class ConvergenceError(SawmossError):
    """Iterative fit did not converge within the allowed iterations."""

    def __init__(self, message: str, best_result=None):
        super().__init__(message)
        self.best_result = best_result


class CalibrationError(SawmossError):
    """Velocity calibration failed (ambiguous matching or residual gate)."""


class ExtractionError(SawmossError):
    """Peak integration or sideband-power inversion failed."""
