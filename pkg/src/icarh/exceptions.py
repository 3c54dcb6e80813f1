"""
iCARH Exception Classes

This module defines custom exceptions for the iCARH library. The CLI maps
the three top-level families onto exit codes (validation 2, numeric 3,
I/O 4).
"""

from typing import Optional, Sequence


class IcarhError(Exception):
    """Base exception for all iCARH errors."""
    pass


class IcarhValidationError(IcarhError):
    """Raised when inputs or configuration fail validation."""
    pass


class IcarhSchemaError(IcarhValidationError):
    """Raised when a data file does not follow the expected schema."""
    pass


class IcarhIncompleteDesignError(IcarhValidationError):
    """Raised when a (subject, time, variable) cell is missing from the data grid."""

    def __init__(self, subject: str, time: int, variable: str):
        self.subject = subject
        self.time = time
        self.variable = variable
        super().__init__(f"Missing observation for subject={subject}, time={time}, variable={variable}")


class IcarhDuplicateRecordError(IcarhValidationError):
    """Raised when a (subject, time, variable) cell appears more than once."""

    def __init__(self, subject: str, time: int, variable: str):
        self.subject = subject
        self.time = time
        self.variable = variable
        super().__init__(f"Duplicate observation for subject={subject}, time={time}, variable={variable}")


class IcarhDegenerateVariableError(IcarhValidationError):
    """Raised when a variable has zero variance and cannot be standardized."""

    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"Variable '{variable}' has zero variance across all subjects and time points")


class IcarhPathwayParseError(IcarhValidationError):
    """Raised when a pathway file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class IcarhEmptyDesignError(IcarhValidationError):
    """Raised when no pathway survives filtering against the profiled metabolites."""
    pass


class IcarhConfigError(IcarhValidationError):
    """Raised when a configuration value is invalid; carries the dotted field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class IcarhUnsupportedModeError(IcarhValidationError):
    """Raised when an analysis is requested for a model mode that does not support it."""
    pass


class IcarhDomainError(IcarhValidationError):
    """Raised when an argument lies outside the domain of an operation."""
    pass


class IcarhNumericError(IcarhError):
    """Raised when a numerical procedure fails."""
    pass


class IcarhPositiveDefiniteError(IcarhNumericError):
    """Raised when I - C(phi) is not positive definite."""

    def __init__(self, phi: Sequence[float]):
        self.phi = list(phi)
        super().__init__(f"I - C(phi) is not positive definite for phi={self.phi}")


class IcarhCalibrationError(IcarhNumericError):
    """Raised when a tau calibration target cannot be reached."""

    def __init__(self, target: float, attainable: tuple):
        self.target = target
        self.attainable = attainable
        super().__init__(
            f"Target shrinkage {target} is not attainable; "
            f"expected kappa ranges over [{attainable[0]:.6f}, {attainable[1]:.6f}]"
        )


class IcarhInitializationError(IcarhNumericError):
    """Raised when the sampler cannot find a finite starting point."""
    pass


class IcarhUndefinedStatisticError(IcarhNumericError):
    """Raised when a statistic is undefined for the given input."""
    pass


class IcarhIOError(IcarhError):
    """Raised for file system problems (missing outputs, refusal to overwrite)."""
    pass
