"""
Circuit Breaker - stop hammering a completion endpoint that keeps failing.

States:
- CLOSED: calls go through
- OPEN: too many consecutive failures, calls fail immediately
- HALF_OPEN: timeout elapsed, a single trial call decides; others fail fast
"""

import threading
import time
import logging
from enum import Enum
from typing import Callable, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class CircuitState(Enum):
    """Circuit breaker states"""
    CLOSED = "closed"
    OPEN = "open"
    HALF_OPEN = "half_open"


class CircuitBreakerOpen(Exception):
    """Raised when the circuit is open (endpoint considered down)"""
    pass


class CircuitBreaker:
    """
    Thread-safe circuit breaker shared by all generations using one endpoint.

    Example:
        >>> breaker = CircuitBreaker(max_failures=5, timeout=60)
        >>> result = breaker.call(lambda: client.completions.create(**payload))
    """

    def __init__(
        self,
        max_failures: int = 5,
        timeout: float = 60,
        counted: tuple[type[BaseException], ...] = (Exception,),
    ):
        """
        Args:
            max_failures: Consecutive failures before the circuit opens
            timeout: Seconds to wait before a half-open trial call
            counted: Exception types that count as endpoint failures
        """
        self.max_failures = max_failures
        self.timeout = timeout
        self.counted = counted

        self.failures = 0
        self.last_failure_time: Optional[float] = None
        self.state = CircuitState.CLOSED
        self._trial_in_flight = False
        self._lock = threading.Lock()

    def call(self, func: Callable[[], T]) -> T:
        """
        Call func through the breaker. While half-open only one trial call is
        in flight; concurrent callers fail fast until it settles.

        Raises:
            CircuitBreakerOpen: circuit open and timeout not yet elapsed, or a
                half-open trial is already running
            Exception: whatever func raises
        """
        with self._lock:
            if self.state == CircuitState.OPEN:
                elapsed = time.monotonic() - (self.last_failure_time or 0.0)
                if elapsed > self.timeout:
                    logger.info("Circuit breaker timeout expired, moving to HALF_OPEN")
                    self.state = CircuitState.HALF_OPEN
                else:
                    raise CircuitBreakerOpen(
                        f"Circuit breaker open after {self.failures} failures. "
                        f"Wait {self.timeout - elapsed:.0f}s"
                    )
            trial = self.state == CircuitState.HALF_OPEN
            if trial:
                if self._trial_in_flight:
                    raise CircuitBreakerOpen("Circuit breaker half-open, trial call in flight")
                self._trial_in_flight = True

        try:
            result = func()
        except self.counted:
            with self._lock:
                self.failures += 1
                self.last_failure_time = time.monotonic()
                if self.failures >= self.max_failures and self.state != CircuitState.OPEN:
                    logger.warning(f"Circuit breaker opening after {self.failures} failures")
                    self.state = CircuitState.OPEN
                elif self.state == CircuitState.HALF_OPEN:
                    logger.warning("Circuit breaker half-open trial failed, reopening")
                    self.state = CircuitState.OPEN
                if trial:
                    self._trial_in_flight = False
            raise
        except BaseException:
            if trial:
                with self._lock:
                    self._trial_in_flight = False
            raise

        with self._lock:
            if trial:
                self._trial_in_flight = False
            if self.state == CircuitState.HALF_OPEN:
                logger.info("Circuit breaker recovered, moving to CLOSED")
                self.state = CircuitState.CLOSED
            self.failures = 0
        return result

    def reset(self):
        """Force the circuit closed."""
        with self._lock:
            self.failures = 0
            self.last_failure_time = None
            self._trial_in_flight = False
            self.state = CircuitState.CLOSED
        logger.info("Circuit breaker manually reset")

    def get_state(self) -> dict:
        """Snapshot for logging."""
        with self._lock:
            return {
                "state": self.state.value,
                "failures": self.failures,
                "max_failures": self.max_failures,
                "timeout": self.timeout,
            }
