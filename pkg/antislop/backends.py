"""
Model backends - "next chunk with top-logprob candidates".

Two implementations share one contract: a deterministic in-process mock
model (this module) and an OpenAI-compatible completions client
(http_backend). Both hand the sampler normalized ChunkResponses.
"""

import hashlib
import logging
import math
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np
import yaml
from pydantic import BaseModel, Field, PrivateAttr, ValidationError, model_validator

from antislop.error_handling import ConfigError, MalformedResponseError
from antislop.models import CandidateLogprob, ChunkRequest, ChunkResponse, ChunkToken
from antislop.sampling import apply_sampling_filters, draw

logger = logging.getLogger(__name__)


@runtime_checkable
class ModelBackend(Protocol):
    name: str

    def next_chunk(self, req: ChunkRequest) -> ChunkResponse:
        ...


def normalize_chunk(resp: ChunkResponse, top_logprobs: int) -> ChunkResponse:
    """
    Sort every candidate list descending, drop duplicate texts, cap at
    top_logprobs while keeping the emitted token. Idempotent.

    Raises:
        MalformedResponseError: an emitted token has no candidate entry
    """
    tokens = []
    for i, tok in enumerate(resp.tokens):
        best: dict[str, CandidateLogprob] = {}
        for c in tok.candidates:
            if c.text not in best or c.logprob > best[c.text].logprob:
                best[c.text] = c
        ordered = sorted(best.values(), key=lambda c: -c.logprob)
        if tok.text not in best:
            raise MalformedResponseError(
                f"emitted token {tok.text!r} at chunk position {i} missing from candidates",
                raw_excerpt=tok.model_dump_json()[:500],
            )
        capped = ordered[:top_logprobs]
        if tok.text not in {c.text for c in capped}:
            capped = capped[:top_logprobs - 1] + [best[tok.text]]
        tok_id = tok.id if tok.id is not None else best[tok.text].id
        tokens.append(ChunkToken(text=tok.text, id=tok_id, candidates=capped))
    return ChunkResponse(tokens=tokens, finish_reason=resp.finish_reason, attempts=resp.attempts)


def apply_stop_sequences(resp: ChunkResponse, stop_sequences: Sequence[str]) -> ChunkResponse:
    """
    Client-side stop check within one chunk: cut at the first token that
    reaches into a stop sequence.
    """
    if not stop_sequences or not resp.tokens:
        return resp
    text = "".join(t.text for t in resp.tokens)
    hits = [text.find(s) for s in stop_sequences if s]
    hits = [h for h in hits if h >= 0]
    if not hits:
        return resp
    cut_char = min(hits)
    kept, pos = [], 0
    for tok in resp.tokens:
        if pos + len(tok.text) > cut_char:
            break
        kept.append(tok)
        pos += len(tok.text)
    return ChunkResponse(tokens=kept, finish_reason="stop", attempts=resp.attempts)


# --- mock model ---

class MockModelSpec(BaseModel):
    """
    A table-driven language model. The distribution for the next token is
    looked up by the longest context key the text so far ends with; text
    matching no key uses `default`.
    """
    vocabulary: list[str] = Field(min_length=2)
    contexts: dict[str, dict[str, float]] = Field(default_factory=dict)
    default: dict[str, float]
    eos_token: Optional[str] = None

    _index: dict[str, int] = PrivateAttr(default_factory=dict)
    _keys: list[str] = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def _check_distributions(self):
        vocab = set(self.vocabulary)
        if len(vocab) != len(self.vocabulary):
            raise ValueError("vocabulary entries must be distinct")
        if self.eos_token is not None and self.eos_token not in vocab:
            raise ValueError(f"eos_token {self.eos_token!r} not in vocabulary")
        for name, dist in [("default", self.default), *self.contexts.items()]:
            if len(dist) < 2:
                raise ValueError(f"distribution {name!r} needs at least 2 candidates")
            unknown = set(dist) - vocab
            if unknown:
                raise ValueError(f"distribution {name!r} uses tokens outside the vocabulary: {sorted(unknown)}")
            if any(p <= 0 for p in dist.values()):
                raise ValueError(f"distribution {name!r} has non-positive probabilities")
            total = sum(dist.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"distribution {name!r} sums to {total}, expected 1")
        return self

    def model_post_init(self, __context) -> None:
        self._index = {t: i for i, t in enumerate(self.vocabulary)}
        self._keys = sorted(self.contexts, key=lambda k: (-len(k), k))

    def token_id(self, token: str) -> Optional[int]:
        return self._index.get(token)

    def distribution_for(self, text: str) -> list[tuple[str, float]]:
        """Next-token distribution, sorted by probability then token text."""
        dist = self.default
        for key in self._keys:
            if text.endswith(key):
                dist = self.contexts[key]
                break
        return sorted(dist.items(), key=lambda kv: (-kv[1], kv[0]))


def load_mock_spec(path: Union[str, Path]) -> MockModelSpec:
    """Load a mock model from YAML (or JSON)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Mock model spec not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    try:
        return MockModelSpec.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid mock model spec {path}: {e}") from e


def _request_rng(req: ChunkRequest) -> np.random.Generator:
    digest = hashlib.sha256(f"{req.seed}|{req.prompt_text}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "big"))


def mock_next_chunk(spec: MockModelSpec, req: ChunkRequest) -> ChunkResponse:
    """
    Deterministic under (spec, req.seed, req.prompt_text). Sampling is
    restricted to the top_logprobs candidates, filtered with the request's
    min_p/temperature/top_p/top_k. The eos token ends the chunk and is
    never emitted or listed as a candidate.
    """
    rng = _request_rng(req)
    text = req.prompt_text
    tokens: list[ChunkToken] = []
    finish = "length"

    for _ in range(req.max_tokens):
        cands = spec.distribution_for(text)[:req.top_logprobs]
        dist = apply_sampling_filters(
            [t for t, _ in cands], [p for _, p in cands],
            req.min_p, req.temperature, req.top_p, req.top_k,
        )
        token = draw(dist, rng)
        if token == spec.eos_token:
            finish = "eos"
            break
        tokens.append(ChunkToken(
            text=token,
            id=spec.token_id(token),
            candidates=[
                CandidateLogprob(text=t, logprob=math.log(p), id=spec.token_id(t))
                for t, p in cands if t != spec.eos_token
            ],
        ))
        text += token

    resp = ChunkResponse(tokens=tokens, finish_reason=finish)
    return apply_stop_sequences(normalize_chunk(resp, req.top_logprobs), req.stop_sequences)


class MockBackend:
    """ModelBackend over a MockModelSpec. Pure, freely shareable."""
    name = "mock"

    def __init__(self, spec: MockModelSpec):
        self.spec = spec

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> "MockBackend":
        return cls(load_mock_spec(path))

    def next_chunk(self, req: ChunkRequest) -> ChunkResponse:
        return mock_next_chunk(self.spec, req)

    def probe(self) -> None:
        """Nothing to check in-process."""
