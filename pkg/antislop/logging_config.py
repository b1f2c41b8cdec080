"""
Structured Logging - JSON-formatted logs for generation runs.
Every backend call, backtrack and finished generation becomes one searchable
JSON line.
"""

import logging
import json
import sys
from datetime import datetime, timezone
from typing import Any, Optional

_STRUCTURED_KEY = "structured"


class JSONFormatter(logging.Formatter):
    """Formatter that outputs one JSON object per record."""

    def format(self, record):
        """Format log record as JSON."""
        payload = getattr(record, _STRUCTURED_KEY, None)
        if payload is None:
            payload = {
                "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
                "level": record.levelname,
                "logger": record.name,
                "message": record.getMessage(),
            }
            if record.exc_info:
                payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=str)


def configure_logging(level: str = "INFO", stream=None) -> None:
    """Install a single JSON handler on the root logger."""
    root = logging.getLogger()
    root.setLevel(level.upper())
    for handler in list(root.handlers):
        if getattr(handler, "_antislop", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JSONFormatter())
    handler._antislop = True
    root.addHandler(handler)


class StructuredLogger:
    """
    Structured logger for sampler and pipeline events.
    Records propagate to whatever handlers configure_logging installed.
    """

    def __init__(self, name: str):
        """
        Args:
            name: Logger name
        """
        self.logger = logging.getLogger(name)

    def _emit(self, level: int, event_type: str, **fields: Any) -> None:
        if not self.logger.isEnabledFor(level):
            return
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "event_type": event_type,
            **fields,
        }
        self.logger.log(level, event_type, extra={_STRUCTURED_KEY: entry})

    def log_backend_call(
        self,
        backend: str,
        prompt_chars: int,
        tokens_returned: int,
        attempts: int,
        latency_ms: float,
        success: bool,
        error: Optional[str] = None,
    ):
        """
        Log one chunk request.

        Args:
            backend: Backend kind ("mock" or "http")
            prompt_chars: Length of the prompt text sent
            tokens_returned: Tokens in the chunk (0 on failure)
            attempts: Attempts used, including retries
            latency_ms: Wall time in milliseconds
            success: Whether the call produced a chunk
            error: Error message when success is False
        """
        entry = {
            "backend": backend,
            "prompt_chars": prompt_chars,
            "tokens_returned": tokens_returned,
            "attempts": attempts,
            "latency_ms": round(latency_ms, 3),
            "success": success,
        }
        if error:
            entry["error"] = error
        level = logging.DEBUG if success else logging.WARNING
        self._emit(level, "backend_call", **entry)

    def log_backtrack(self, event) -> None:
        """Log a BacktrackEvent (substitution or let-through)."""
        self._emit(
            logging.DEBUG,
            "backtrack",
            generation_id=event.generation_id,
            position=event.position,
            pattern=event.pattern,
            rejected_text=event.rejected_text,
            resampled_text=event.resampled_text,
            n_chosen=len(event.chosen_texts),
            let_through=event.let_through,
        )

    def log_generation(self, generation_id: str, stats) -> None:
        """Log the GenerationStats of a finished generation."""
        self._emit(logging.INFO, "generation", generation_id=generation_id, **stats.summary())

    def log_stage(self, stage: str, **fields: Any) -> None:
        """Log a pipeline stage boundary with its key numbers."""
        self._emit(logging.INFO, "stage", stage=stage, **fields)
