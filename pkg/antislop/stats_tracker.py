"""
Stats Tracker - run-level throughput accounting across generation threads.
"""

import threading
from typing import Any

from antislop.models import GenerationStats


class StatsTracker:
    """
    Aggregates per-generation GenerationStats into run totals.
    Safe to call from every worker thread.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._totals = GenerationStats()
        self._generations = 0
        self._failures = 0

    def track_generation(self, stats: GenerationStats) -> None:
        with self._lock:
            t = self._totals
            t.tokens_kept += stats.tokens_kept
            t.tokens_generated += stats.tokens_generated
            t.tokens_discarded += stats.tokens_discarded
            t.backtracks += stats.backtracks
            t.lets_through += stats.lets_through
            t.backend_calls += stats.backend_calls
            t.elapsed_ms += stats.elapsed_ms
            self._generations += 1

    def track_failure(self) -> None:
        with self._lock:
            self._failures += 1

    @property
    def totals(self) -> GenerationStats:
        with self._lock:
            return self._totals.model_copy()

    def summary(self) -> dict[str, Any]:
        """
        Run totals plus throughput. kept_tokens_per_sec is measured against
        summed generation time, so it does not depend on the thread count.
        """
        with self._lock:
            t = self._totals
            seconds = t.elapsed_ms / 1000
            return {
                "generations": self._generations,
                "failures": self._failures,
                **t.summary(),
                "kept_tokens_per_sec": t.tokens_kept / seconds if seconds > 0 else 0.0,
            }
