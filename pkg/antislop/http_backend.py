"""
HTTP backend - OpenAI-compatible v1/completions client with top logprobs.

Each chunk request goes: retry_with_backoff -> circuit breaker -> in-flight
slot -> openai client. Transport-class failures are retried; an endpoint
that returns no logprobs is a configuration error and is never retried.
"""

import logging
import math
import time
from typing import Any, Optional

import openai
from openai import OpenAI
from pydantic import BaseModel, Field

from antislop.backends import apply_stop_sequences, normalize_chunk
from antislop.circuit_breaker import CircuitBreaker, CircuitBreakerOpen
from antislop.error_handling import (
    BackendConfigError,
    BackendUnavailableError,
    MalformedResponseError,
    TransientBackendError,
    retry_with_backoff,
)
from antislop.logging_config import StructuredLogger
from antislop.models import CandidateLogprob, ChunkRequest, ChunkResponse, ChunkToken
from antislop.rate_limiter import RequestLimiter

logger = logging.getLogger(__name__)
events = StructuredLogger("antislop.backend")

_FINISH_REASONS = {"length": "length", "stop": "stop", "eos": "eos", None: "length"}


class EndpointConfig(BaseModel):
    base_url: str
    api_key: Optional[str] = None
    model: str
    timeout: float = Field(default=480.0, gt=0)
    max_attempts: int = Field(default=5, ge=1)
    initial_delay: float = Field(default=1.0, ge=0.0)
    max_delay: float = Field(default=30.0, ge=0.0)
    max_in_flight: int = Field(default=50, ge=1)
    breaker_failures: int = Field(default=5, ge=1)
    breaker_timeout: float = Field(default=60.0, ge=0)


def _excerpt(raw: Any) -> str:
    try:
        text = raw.model_dump_json()
    except AttributeError:
        text = repr(raw)
    return text[:500]


def parse_completion(raw: Any, top_logprobs: int) -> ChunkResponse:
    """
    Turn a completions response into a normalized ChunkResponse.
    Char offsets are not read from the payload; the trace rebuilds them by
    concatenating token texts.

    Raises:
        BackendConfigError: no logprobs block (endpoint cannot serve the sampler)
        MalformedResponseError: anything else we cannot interpret
    """
    try:
        choice = raw.choices[0]
    except (AttributeError, IndexError, TypeError) as e:
        raise MalformedResponseError("response has no choices", _excerpt(raw)) from e

    lp = getattr(choice, "logprobs", None)
    if lp is None or getattr(lp, "top_logprobs", None) is None:
        raise BackendConfigError(
            "endpoint returned no top_logprobs; it must support logprobs on v1/completions"
        )
    texts = lp.tokens or []
    sampled = lp.token_logprobs or []
    tops = lp.top_logprobs or []
    if not (len(texts) == len(sampled) == len(tops)):
        raise MalformedResponseError(
            f"logprob arrays differ in length ({len(texts)}, {len(sampled)}, {len(tops)})",
            _excerpt(raw),
        )

    tokens = []
    for text, own_lp, top in zip(texts, sampled, tops):
        if not isinstance(top, dict):
            raise MalformedResponseError("top_logprobs entry is not a mapping", _excerpt(raw))
        cands = {t: min(float(v), 0.0) for t, v in top.items() if v is not None and math.isfinite(v)}
        if text not in cands and own_lp is not None:
            # the sampled token may fall outside the returned top-n
            cands[text] = min(float(own_lp), 0.0)
        tokens.append(ChunkToken(
            text=text,
            candidates=[CandidateLogprob(text=t, logprob=v) for t, v in cands.items()],
        ))

    reason = getattr(choice, "finish_reason", None)
    finish = _FINISH_REASONS.get(reason)
    if finish is None:
        # abort, content_filter and other server-specific reasons end the text
        logger.warning(f"Unknown finish_reason {reason!r}; treating it as stop")
        finish = "stop"
    return normalize_chunk(ChunkResponse(tokens=tokens, finish_reason=finish), top_logprobs)


class HttpBackend:
    """
    Completions client shared by all generation threads.

    Example:
        >>> backend = HttpBackend(EndpointConfig(base_url="http://localhost:8000/v1", model="m"))
        >>> backend.probe()
        >>> resp = backend.next_chunk(ChunkRequest(prompt_text="Once", max_tokens=20))
    """
    name = "http"

    def __init__(self, config: EndpointConfig, client: Optional[Any] = None):
        self.config = config
        self.client = client or OpenAI(
            base_url=config.base_url,
            api_key=config.api_key or "EMPTY",
            timeout=config.timeout,
            max_retries=0,
        )
        self.limiter = RequestLimiter(max_in_flight=config.max_in_flight)
        self.breaker = CircuitBreaker(
            max_failures=config.breaker_failures,
            timeout=config.breaker_timeout,
            counted=(TransientBackendError,),
        )

    def _payload(self, req: ChunkRequest) -> dict[str, Any]:
        extra: dict[str, Any] = {"min_p": req.min_p}
        if req.top_k is not None:
            extra["top_k"] = req.top_k
        payload = {
            "model": self.config.model,
            "prompt": req.prompt_text,
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "logprobs": req.top_logprobs,
            "extra_body": extra,
        }
        if req.stop_sequences:
            payload["stop"] = list(req.stop_sequences)
        if req.seed is not None:
            payload["seed"] = req.seed
        return payload

    def _post(self, payload: dict[str, Any]) -> Any:
        try:
            with self.limiter.slot():
                return self.client.completions.create(**payload)
        except (openai.APIConnectionError, openai.RateLimitError, openai.InternalServerError) as e:
            raise TransientBackendError(f"{type(e).__name__}: {e}") from e
        except openai.APIStatusError as e:
            raise BackendConfigError(f"endpoint rejected the request ({e.status_code}): {e}") from e

    def next_chunk(self, req: ChunkRequest) -> ChunkResponse:
        payload = self._payload(req)
        attempts = 0

        @retry_with_backoff(
            max_retries=self.config.max_attempts - 1,
            initial_delay=self.config.initial_delay,
            max_delay=self.config.max_delay,
            exceptions=(TransientBackendError,),
        )
        def attempt():
            nonlocal attempts
            attempts += 1
            return self.breaker.call(lambda: self._post(payload))

        start = time.perf_counter()
        try:
            raw = attempt()
        except CircuitBreakerOpen as e:
            events.log_backend_call(self.name, len(req.prompt_text), 0, attempts,
                                    (time.perf_counter() - start) * 1000, False, str(e))
            raise BackendUnavailableError(str(e), attempts=attempts) from e
        except TransientBackendError as e:
            events.log_backend_call(self.name, len(req.prompt_text), 0, attempts,
                                    (time.perf_counter() - start) * 1000, False, str(e))
            raise BackendUnavailableError(
                f"endpoint unavailable after {attempts} attempts: {e}", attempts=attempts
            ) from e

        resp = apply_stop_sequences(parse_completion(raw, req.top_logprobs), req.stop_sequences)
        resp = resp.model_copy(update={"attempts": attempts})
        events.log_backend_call(self.name, len(req.prompt_text), len(resp.tokens), attempts,
                                (time.perf_counter() - start) * 1000, True)
        return resp

    def probe(self) -> None:
        """
        One-token request run before any generation so an endpoint without
        logprobs fails the run up front.
        """
        self.next_chunk(ChunkRequest(prompt_text="Hello", max_tokens=1, top_logprobs=2))


def http_next_chunk(endpoint_config: EndpointConfig, req: ChunkRequest, client: Optional[Any] = None) -> ChunkResponse:
    """One-off chunk request against an endpoint."""
    return HttpBackend(endpoint_config, client=client).next_chunk(req)
