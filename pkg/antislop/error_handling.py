"""
Error Handling - exception hierarchy and retry logic with exponential backoff.
Transport failures against completion endpoints are retried; everything else
fails fast with an error class that maps onto a CLI exit code.
"""

import time
import logging
from functools import wraps
from typing import Callable, Any, Optional, Tuple

logger = logging.getLogger(__name__)


class AntislopError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class ConfigError(AntislopError):
    """User or configuration error (bad key, missing input file, invalid value)."""
    exit_code = 1


class BanlistError(ConfigError):
    """A banlist entry cannot be compiled."""


class DatasetError(ConfigError):
    """A dataset or corpus file is malformed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class BackendError(AntislopError):
    """Failure talking to a model backend."""
    exit_code = 2


class TransientBackendError(BackendError):
    """Retriable transport-class failure (timeout, connection reset, 5xx, 429)."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class BackendUnavailableError(BackendError):
    """Retries exhausted or circuit open."""

    def __init__(self, message: str, attempts: int = 0, position: Optional[int] = None):
        if position is not None:
            message = f"{message} (at token position {position})"
        super().__init__(message)
        self.attempts = attempts
        self.position = position


class BackendConfigError(BackendError):
    """The endpoint cannot serve this toolkit, e.g. it returns no logprobs."""


class MalformedResponseError(BackendError):
    """The endpoint answered with a payload we cannot parse."""

    def __init__(self, message: str, raw_excerpt: str = ""):
        super().__init__(f"{message}; body excerpt: {raw_excerpt!r}")
        self.raw_excerpt = raw_excerpt


class InvariantError(AntislopError):
    """An internal invariant was violated. Always a bug."""
    exit_code = 3


def retry_with_backoff(
    max_retries: int = 4,
    initial_delay: float = 1.0,
    backoff_factor: float = 2.0,
    max_delay: float = 30.0,
    exceptions: Tuple = (TransientBackendError,),
):
    """
    Retry decorator with capped exponential backoff.

    Args:
        max_retries: Retries after the first attempt (4 retries = 5 attempts)
        initial_delay: Delay in seconds before the first retry
        backoff_factor: Multiplier for the delay after each retry
        max_delay: Upper bound on any single delay
        exceptions: Exception types that trigger a retry

    Example:
        @retry_with_backoff(max_retries=4, exceptions=(TransientBackendError,))
        def post_chunk(payload):
            return client.completions.create(**payload)
    """
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            delay = initial_delay

            for attempt in range(max_retries + 1):
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    if attempt == max_retries:
                        logger.error(
                            f"{func.__name__} failed after {max_retries + 1} attempts: {e}"
                        )
                        raise

                    logger.warning(
                        f"{func.__name__} failed (attempt {attempt + 1}/{max_retries + 1}), "
                        f"retrying in {delay:.2f}s: {e}"
                    )
                    if delay > 0:
                        time.sleep(delay)
                    delay = min(delay * backoff_factor, max_delay)

            raise InvariantError("retry loop exited without result")

        return wrapper
    return decorator
