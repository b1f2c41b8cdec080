"""
TokenTrace - the generated tokens plus everything the sampler needs to
backtrack over them: char spans, cached candidate lists, per-position
attenuation counts and ignore marks.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from antislop.error_handling import InvariantError


class Candidate(NamedTuple):
    text: str
    logprob: float
    id: Optional[int] = None


@dataclass
class TokenTrace:
    tokens: list[str] = field(default_factory=list)
    token_ids: list[Optional[int]] = field(default_factory=list)
    spans: list[tuple[int, int]] = field(default_factory=list)
    candidates: list[list[Candidate]] = field(default_factory=list)
    attenuated: list[dict[str, int]] = field(default_factory=list)
    ignore_marks: set[tuple[int, int]] = field(default_factory=set)
    triggered: set[tuple[int, int]] = field(default_factory=set)
    _text: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return self._text

    def text_before(self, position: int) -> str:
        if position >= len(self.tokens):
            return self._text
        return self._text[:self.spans[position][0]]

    def append(self, text: str, token_id: Optional[int], candidates: Sequence[Candidate]) -> None:
        ordered = sorted(candidates, key=lambda c: -c.logprob)
        if text not in {c.text for c in ordered}:
            raise InvariantError(f"token {text!r} missing from its candidate list")
        start = len(self._text)
        self.tokens.append(text)
        self.token_ids.append(token_id)
        self.spans.append((start, start + len(text)))
        self.candidates.append(ordered)
        self.attenuated.append({})
        self._text += text

    def extend(self, chunk_tokens) -> None:
        """Append ChunkToken models from a backend response."""
        for tok in chunk_tokens:
            self.append(
                tok.text,
                tok.id,
                [Candidate(c.text, c.logprob, c.id) for c in tok.candidates],
            )

    def truncate(self, length: int) -> int:
        """Keep the first `length` tokens; returns how many were dropped."""
        dropped = len(self.tokens) - length
        if dropped <= 0:
            return 0
        for name in ("tokens", "token_ids", "spans", "candidates", "attenuated"):
            del getattr(self, name)[length:]
        self._text = self._text[:self.spans[-1][1]] if self.spans else ""
        self.ignore_marks = {m for m in self.ignore_marks if m[0] < length}
        self.triggered = {m for m in self.triggered if m[0] < length}
        return dropped

    def replace(self, position: int, text: str, token_id: Optional[int]) -> int:
        """
        Rewind to `position` and put `text` there, keeping the cached
        candidates and attenuation counts of that position.
        Returns the number of discarded tokens (the replaced one included).
        """
        if not 0 <= position < len(self.tokens):
            raise InvariantError(f"replace at {position} outside trace of length {len(self.tokens)}")
        if text not in {c.text for c in self.candidates[position]}:
            raise InvariantError(f"replacement {text!r} is not a cached candidate at {position}")
        discarded = len(self.tokens) - position
        cands = self.candidates[position]
        counts = self.attenuated[position]
        triggered = {m for m in self.triggered if m[0] <= position}
        self.truncate(position)
        self.append(text, token_id, cands)
        self.attenuated[position] = counts
        self.triggered = triggered
        return discarded

    def check_integrity(self) -> None:
        n = len(self.tokens)
        lengths = {len(self.token_ids), len(self.spans), len(self.candidates), len(self.attenuated)}
        if lengths != {n}:
            raise InvariantError(f"trace arrays out of sync: {n} tokens vs {sorted(lengths)}")
        pos = 0
        for i, (tok, (s, e), cands) in enumerate(zip(self.tokens, self.spans, self.candidates)):
            if s != pos or e - s != len(tok):
                raise InvariantError(f"span of token {i} does not follow its predecessor")
            if tok not in {c.text for c in cands}:
                raise InvariantError(f"token {i} missing from its candidate list")
            pos = e
        if pos != len(self._text):
            raise InvariantError("decoded text length differs from token spans")
        stale = [m for m in self.ignore_marks | self.triggered if m[0] >= n]
        if stale:
            raise InvariantError(f"marks reference dropped positions: {sorted(stale)}")
