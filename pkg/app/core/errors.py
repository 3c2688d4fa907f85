from __future__ import annotations

from typing import Any


class CalSensError(Exception):
    exit_code = 4

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.details = details or {}

    def to_record(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "details": self.details,
            "exit_code": self.exit_code,
        }


class ConfigurationError(CalSensError):
    exit_code = 2


class DataValidationError(CalSensError):
    exit_code = 2


class DegenerateConfoundingError(CalSensError):
    """Measured confounding estimated as zero, so calibrated bounds collapse."""

    exit_code = 3


class NoCrossingError(CalSensError):
    exit_code = 3


class NumericalError(CalSensError):
    exit_code = 4


class FitError(NumericalError):
    pass


class LogisticFitError(FitError):
    pass


class ThetaSolverError(FitError):
    pass


class BootstrapError(NumericalError):
    pass
