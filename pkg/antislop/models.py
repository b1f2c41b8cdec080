"""
Pydantic models for everything that crosses a process or file boundary:
backend requests/responses, sampler settings, event logs, FTPO samples,
banlist documents and corpora.
"""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TokenRef(BaseModel):
    """A token as text plus an optional vocabulary id."""
    text: str
    id: Optional[int] = None


class SamplerConfig(BaseModel):
    """Knobs of the backtracking sampler."""
    model_config = ConfigDict(frozen=True)

    ban_strength: float = Field(default=1.0, ge=0.0, le=1.0, description="s in p * 10^(-10 s)")
    min_p: float = Field(default=0.01, ge=0.0, le=1.0)
    temperature: float = Field(default=1.0, gt=0.0)
    top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    top_k: Optional[int] = Field(default=50, ge=1, description="None disables top-k")
    chunk_size: int = Field(default=20, ge=1, description="Tokens per backend call")
    top_logprobs_count: int = Field(default=20, ge=2)
    force_backtrack: bool = False
    max_new_tokens: int = Field(default=1000, ge=1)
    stop_sequences: list[str] = Field(default_factory=list)


class ChunkRequest(BaseModel):
    """One "next chunk with top-logprob candidates" request."""
    prompt_text: str
    max_tokens: int = Field(ge=1)
    temperature: float = Field(default=1.0, gt=0.0)
    top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    top_k: Optional[int] = Field(default=None, ge=1)
    min_p: float = Field(default=0.0, ge=0.0, le=1.0)
    top_logprobs: int = Field(default=20, ge=2)
    stop_sequences: list[str] = Field(default_factory=list)
    seed: Optional[int] = None


class CandidateLogprob(BaseModel):
    text: str
    logprob: float = Field(le=0.0)
    id: Optional[int] = None


class ChunkToken(BaseModel):
    """An emitted token and the candidate list at its position."""
    text: str
    id: Optional[int] = None
    candidates: list[CandidateLogprob]


class ChunkResponse(BaseModel):
    tokens: list[ChunkToken] = Field(default_factory=list)
    finish_reason: Literal["length", "stop", "eos"] = "length"
    attempts: int = Field(default=1, ge=1)


class BacktrackEvent(BaseModel):
    """
    One violation handled by the sampler. Serialized as one JSONL record.
    let_through=True means the banned token was kept and the occurrence ignored.
    """
    generation_id: str
    position: int = Field(ge=0)
    pattern_id: int = Field(ge=0)
    pattern: str
    kind: Literal["phrase", "ngram", "regex"]
    rejected_token_id: Optional[int] = None
    rejected_text: str
    chosen_token_ids: list[Optional[int]] = Field(default_factory=list)
    chosen_texts: list[str] = Field(default_factory=list)
    resampled_token_id: Optional[int] = None
    resampled_text: str
    let_through: bool
    context_text: str = Field(default="", description="Generated text before position")

    @model_validator(mode="after")
    def _resampled_is_candidate(self):
        if self.resampled_text != self.rejected_text and self.resampled_text not in self.chosen_texts:
            raise ValueError("resampled token must be a chosen candidate or the rejected token")
        if len(self.chosen_token_ids) != len(self.chosen_texts):
            raise ValueError("chosen_token_ids and chosen_texts differ in length")
        return self

    @property
    def rejected(self) -> TokenRef:
        return TokenRef(text=self.rejected_text, id=self.rejected_token_id)

    @property
    def chosen(self) -> list[TokenRef]:
        return [TokenRef(text=t, id=i) for t, i in zip(self.chosen_texts, self.chosen_token_ids)]


class GenerationStats(BaseModel):
    tokens_kept: int = 0
    tokens_generated: int = 0
    tokens_discarded: int = 0
    backtracks: int = 0
    lets_through: int = 0
    backend_calls: int = 0
    elapsed_ms: float = 0.0

    @property
    def kept_ratio(self) -> float:
        """Share of produced tokens that survived backtracking."""
        return self.tokens_kept / self.tokens_generated if self.tokens_generated else 1.0

    def summary(self) -> dict:
        return {
            "tokens_kept": self.tokens_kept,
            "tokens_generated": self.tokens_generated,
            "tokens_discarded": self.tokens_discarded,
            "backtracks": self.backtracks,
            "lets_through": self.lets_through,
            "backend_calls": self.backend_calls,
            "elapsed_ms": round(self.elapsed_ms, 3),
            "kept_ratio": round(self.kept_ratio, 6),
        }


class SampleSource(BaseModel):
    pattern: str
    generation_id: str
    position: int = Field(ge=0)


class FtpoSample(BaseModel):
    """Prompt prefix + one rejected token + chosen alternatives."""
    prompt_text: str
    rejected: TokenRef
    chosen: list[TokenRef] = Field(min_length=1)
    source: SampleSource

    @model_validator(mode="after")
    def _check_tokens(self):
        texts = [c.text for c in self.chosen]
        if self.rejected.text in texts:
            raise ValueError(f"rejected token {self.rejected.text!r} also listed as chosen")
        if len(set(texts)) != len(texts):
            raise ValueError("chosen tokens are not distinct")
        return self


class BanlistDocument(BaseModel):
    """On-disk banlist: the JSON document the pattern engine compiles."""
    slop_phrases: list[str] = Field(default_factory=list)
    ngrams: list[list[str]] = Field(default_factory=list)
    regex_patterns: list[str] = Field(default_factory=list)
    whitelist: list[str] = Field(default_factory=list)

    @field_validator("ngrams", mode="before")
    @classmethod
    def _split_ngram_strings(cls, value):
        # upstream configs write n-grams as space-separated strings
        return [v.split() if isinstance(v, str) else v for v in (value or [])]

    def merge(self, other: "BanlistDocument") -> "BanlistDocument":
        """Union preserving order; entries already present are not duplicated."""
        def _union(a, b, key=lambda x: x):
            seen = {key(x) for x in a}
            out = list(a)
            for x in b:
                if key(x) not in seen:
                    seen.add(key(x))
                    out.append(x)
            return out

        return BanlistDocument(
            slop_phrases=_union(self.slop_phrases, other.slop_phrases, key=str.lower),
            ngrams=_union(self.ngrams, other.ngrams, key=lambda g: tuple(w.lower() for w in g)),
            regex_patterns=_union(self.regex_patterns, other.regex_patterns),
            whitelist=_union(self.whitelist, other.whitelist, key=str.lower),
        )

    def size(self) -> int:
        return len(self.slop_phrases) + len(self.ngrams) + len(self.regex_patterns)


class CorpusDocument(BaseModel):
    prompt_id: str
    text: str

    @field_validator("prompt_id", mode="before")
    @classmethod
    def _coerce_id(cls, value):
        return str(value)


class GenerationRecord(BaseModel):
    """One generated output, written to corpus.jsonl."""
    prompt_id: str
    generation_id: str
    prompt: str
    text: str
    error: Optional[str] = None
