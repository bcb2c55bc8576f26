"""Exception hierarchy shared by every component.

Each exception carries the process exit code the command-line front end
reports for it.
"""

from typing import Any, Dict, List, Optional


class GaussianPrepError(Exception):
    exit_code: int = 1


class ConfigParse(GaussianPrepError):
    """Scenario or settings document could not be read or is inconsistent"""
    exit_code = 2


class ValidationError(GaussianPrepError):
    exit_code = 2


class DimensionMismatch(ValidationError):
    pass


class NonSymmetricG(ValidationError):
    pass


class NonSymmetricCovariance(ValidationError):
    pass


class InvalidEfficiency(ValidationError):
    pass


class ImaginaryResidue(ValidationError):
    """A matrix that must be real came out with a significant imaginary part"""


class SingularCovariance(ValidationError):
    pass


class NotDetectable(GaussianPrepError):
    exit_code = 3

    def __init__(self, message: str, certificate: Any = None) -> None:
        super().__init__(message)
        self.certificate = certificate


class NotPure(GaussianPrepError):
    exit_code = 4


class SolverError(GaussianPrepError):
    exit_code = 5


class RankDeficient(SolverError):
    def __init__(self, message: str, margin: float, suggestion: str = "") -> None:
        super().__init__(message)
        self.margin = margin
        self.suggestion = suggestion


class NotInDomRic(SolverError):
    def __init__(self, message: str, failed: List[str], report: Any = None) -> None:
        super().__init__(message)
        self.failed = failed
        self.report = report


class IllConditionedSubspace(SolverError):
    def __init__(self, message: str, condition: float) -> None:
        super().__init__(message)
        self.condition = condition


class UnstableDrift(SolverError):
    pass


class VerificationFailed(SolverError):
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IntegrationError(GaussianPrepError):
    exit_code = 6


class StepSizeTooLarge(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass
