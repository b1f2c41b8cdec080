"""
Request Limiter - caps concurrent in-flight requests to a completion endpoint.
Many generation workers share one client; the endpoint degrades badly past
some concurrency threshold, so requests queue here instead.
"""

import threading
import logging
from contextlib import contextmanager
from typing import Iterator

logger = logging.getLogger(__name__)


class RequestLimiter:
    """
    Bounded in-flight request counter.

    Example:
        >>> limiter = RequestLimiter(max_in_flight=50)
        >>> with limiter.slot():
        ...     response = client.completions.create(**payload)
    """

    def __init__(self, max_in_flight: int = 50):
        """
        Args:
            max_in_flight: Maximum simultaneous requests
        """
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.max_in_flight = max_in_flight
        self._semaphore = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self._in_flight = 0
        self._peak = 0

    @contextmanager
    def slot(self) -> Iterator[None]:
        """Hold one request slot for the duration of the block."""
        self._semaphore.acquire()
        with self._lock:
            self._in_flight += 1
            self._peak = max(self._peak, self._in_flight)
        try:
            yield
        finally:
            with self._lock:
                self._in_flight -= 1
            self._semaphore.release()

    @property
    def in_flight(self) -> int:
        with self._lock:
            return self._in_flight

    @property
    def peak(self) -> int:
        """Highest concurrency observed so far."""
        with self._lock:
            return self._peak
