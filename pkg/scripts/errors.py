"""
Error types for cone-resolvent
Every failure carries the process exit code the CLI reports for it
"""

from typing import Optional


class ResolventError(Exception):
    """Base class for all expected failures"""

    exit_code: int = 2

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "ResolventError":
        """Tag the error with the pipeline stage that raised it"""
        if self.stage is None:
            self.stage = stage
        return self


# Validation (exit 1)

class ConfigValidationError(ResolventError):
    """Run file or environment configuration is invalid"""

    exit_code = 1

    def __init__(self, message: str, line: Optional[int] = None, stage: Optional[str] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, stage)
        self.line = line


class InsufficientModesError(ResolventError):
    """The mode list cannot certify an index set up to its horizon"""

    exit_code = 1


# Numeric failures (exit 2)

class NumericFailure(ResolventError):
    """A numeric solve did not produce a trustworthy answer"""

    exit_code = 2


class ForcingTooStrongError(NumericFailure):
    """Zero-energy forcing decays too slowly (pi_min <= 2)"""


class QuadratureError(NumericFailure):
    """Quadrature produced non-finite values"""


class TailMismatchError(NumericFailure):
    """Grid samples and the symbolic tail disagree on their overlap"""


class DivergenceError(NumericFailure):
    """Neumann iteration grew instead of contracting"""

    def __init__(self, message: str, spectral_radius: float = float("nan")):
        super().__init__(f"{message} (spectral radius estimate {spectral_radius:.3g})")
        self.spectral_radius = spectral_radius


class ResonanceError(NumericFailure):
    """Wronskian of the one-sided solutions vanishes"""


class FitConditioningError(NumericFailure):
    """Least-squares candidates are numerically collinear"""


class PhaseUnwrapError(NumericFailure):
    """Phase samples jump too much to unwrap reliably"""


class OutOfHullError(NumericFailure):
    """Evaluation requested outside the sampled grid and its asymptotic ends"""


class AdmissibilityError(NumericFailure):
    """Forcing decays at an order the transition-face inverse does not accept"""


# Invariant violations (exit 3)

class InvariantViolation(ResolventError):
    """An internal consistency guarantee failed"""

    exit_code = 3


class PositivityError(InvariantViolation):
    """An index set that must lie in Re > 0 does not"""


class StagnationError(InvariantViolation):
    """The quasimode iteration stopped gaining orders"""
