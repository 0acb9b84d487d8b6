import logging
from typing import Optional

logger = logging.getLogger(__name__)


class TstnnException(Exception):
    """Base error; ``exit_code`` is the process status the CLI reports for it."""

    exit_code = 2
    description = 'invalid input'

    def __init__(self, description: Optional[str] = None, field: Optional[str] = None) -> None:
        if description is not None:
            self.description = description
        self.field = field
        super().__init__(self.description)

    def __str__(self) -> str:
        if self.field is not None:
            return f'{self.field}: {self.description}'
        return self.description


class ConfigError(TstnnException):
    description = 'invalid configuration'


class ShapeError(TstnnException):
    description = 'tensor shape mismatch'


class UsageError(TstnnException):
    description = 'invalid use of the API'


class AudioFormatError(TstnnException):
    description = 'unsupported audio format'


class CheckpointError(TstnnException):
    description = 'invalid checkpoint'


class GenerationError(TstnnException):
    description = 'cannot generate synthetic mixture'


class UndefinedMetricError(TstnnException):
    exit_code = 3
    description = 'metric undefined for input'


class NumericError(TstnnException):
    exit_code = 3
    description = 'non-finite value encountered'


class GradcheckFailure(TstnnException):
    exit_code = 3
    description = 'gradient check failed'


def handle_exception(e: TstnnException) -> int:
    """Log the error at the CLI boundary and return its exit code."""

    logger.error('%s: %s', type(e).__name__, e)
    return e.exit_code
