from __future__ import annotations


class ArnoldLabError(Exception):
    """Base class for every error raised by arnoldlab."""

    exit_code = 3


class ConfigError(ArnoldLabError, ValueError):
    """Invalid parameters or configuration, detected before computing."""

    exit_code = 2


class HarmonicTableError(ConfigError):
    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WindowError(ConfigError):
    """A state or parameter is outside the admissible window of a map."""


class NumericError(ArnoldLabError, RuntimeError):
    exit_code = 3


class ConvergenceError(NumericError):
    pass


class EscapeError(NumericError):
    """A trajectory left the region where the computation is meaningful."""


class ResonanceError(NumericError):
    pass


class StepLimitError(NumericError):
    pass


class ShadowingError(NumericError):
    def __init__(self, message: str, *, step: int, correction: float) -> None:
        self.step = step
        self.correction = correction
        super().__init__(f"step {step}: {message} (correction {correction:.3e})")
