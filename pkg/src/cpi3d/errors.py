"""Exception types shared across the package."""


class Cpi3dError(Exception):
    """Base class for all package errors."""


class ParseError(Cpi3dError, ValueError):
    """Malformed structure file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyStructureError(ParseError):
    """Input parsed cleanly but produced no usable structure."""


class ValidationError(Cpi3dError, ValueError):
    """Input violated a documented precondition."""


class ConfigError(Cpi3dError, ValueError):
    """Inconsistent model/run configuration (shape mismatches and the like)."""


class CheckpointError(Cpi3dError, ValueError):
    """Unreadable, truncated, or version-incompatible checkpoint file."""


class NumericalError(Cpi3dError, ArithmeticError):
    """Non-finite values surfaced inside a numerical computation."""


class TrainingDiverged(Cpi3dError, RuntimeError):
    """Loss became non-finite. Carries the offending step index."""

    def __init__(self, step):
        super().__init__(f"loss is not finite at step {step}")
        self.step = step
