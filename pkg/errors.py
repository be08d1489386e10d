# errors.py — exception hierarchy; the CLI maps these to exit codes

from typing import Optional


class AgepiError(Exception):
    """Base class for every error raised by the toolkit."""


# -----------------------------------------
# Configuration side (exit code 2)
# -----------------------------------------
class ConfigError(AgepiError, ValueError):
    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class ExpressionError(ConfigError):
    """Rate expression could not be parsed or evaluated."""

    def __init__(self, message: str, source: str = "", offset: Optional[int] = None,
                 key_path: Optional[str] = None):
        self.detail = message
        self.source = source
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset} of {source!r})"
        super().__init__(message, key_path=key_path)


class ModelValidationError(ConfigError):
    def __init__(self, message: str, value: Optional[float] = None,
                 key_path: Optional[str] = None):
        self.value = value
        super().__init__(message, key_path=key_path)


# -----------------------------------------
# Numerical side (exit code 3)
# -----------------------------------------
class NumericalError(AgepiError, RuntimeError):
    pass


class DegenerateModelError(NumericalError):
    pass


class RootFindingError(NumericalError):
    pass


class SimulationError(NumericalError):
    def __init__(self, message: str, step_index: Optional[int] = None):
        self.step_index = step_index
        if step_index is not None:
            message = f"{message} (step {step_index})"
        super().__init__(message)


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def exit_code_for(err: BaseException) -> int:
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, NumericalError):
        return EXIT_NUMERICAL
    return 1
