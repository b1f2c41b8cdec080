"""
Pattern engine - compile banned phrases, n-grams and regexes, then scan a
decoded trace for the earliest violation not already let through.

Phrases go through one Aho-Corasick automaton over the case-folded text
(pyahocorasick), n-grams are matched on the stopword-stripped word stream,
regexes run over the full text. Pattern ids are global: phrases first, then
n-grams, then regexes.
"""

import json
import logging
import re
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence, Union

import ahocorasick
from pydantic import ValidationError

from antislop.error_handling import BanlistError
from antislop.models import BanlistDocument
from antislop.text_utils import content_words, fold_case, is_word_char, load_stopwords, WORD_RE

logger = logging.getLogger(__name__)

Kind = Literal["phrase", "ngram", "regex"]
KIND_RANK = {"phrase": 0, "ngram": 1, "regex": 2}
Span = tuple[int, int]

# how much preceding text initiates() looks at
_INITIATOR_CONTEXT_CHARS = 512


@dataclass(frozen=True)
class PatternMatch:
    kind: Kind
    pattern_id: int
    start: int
    end: int
    pattern: str

    @property
    def char_span(self) -> Span:
        return (self.start, self.end)

    def sort_key(self):
        # earliest start, then longest, then phrase < ngram < regex
        return (self.start, -(self.end - self.start), KIND_RANK[self.kind], self.pattern_id)


@dataclass(frozen=True)
class Violation:
    """A match mapped onto the token trace."""
    kind: Kind
    pattern_id: int
    char_span: Span
    start_token_index: int
    pattern: str


def _normalize_word(word: str) -> str:
    return fold_case(word.strip()).replace("’", "'")


class Banlist:
    """
    Compiled, immutable banlist. Safe to share between generation threads.
    Build it with compile_banlist().
    """

    def __init__(
        self,
        phrases: Sequence[str],
        ngrams: Sequence[tuple[str, ...]],
        regex_sources: Sequence[str],
        whitelist: Iterable[str],
        min_word_len: int,
    ):
        self.phrases = tuple(phrases)
        self.ngrams = tuple(ngrams)
        self.regex_sources = tuple(regex_sources)
        self.whitelist = frozenset(whitelist)
        self.min_word_len = min_word_len

        self._folded_phrases = tuple(fold_case(p) for p in self.phrases)
        self._automaton = None
        if self.phrases:
            self._automaton = ahocorasick.Automaton()
            for i, key in enumerate(self._folded_phrases):
                self._automaton.add_word(key, (i, len(key)))
            self._automaton.make_automaton()

        self._ngram_ids = {
            gram: len(self.phrases) + i for i, gram in enumerate(self.ngrams)
        }
        self._ngram_lengths = sorted({len(g) for g in self.ngrams})
        self._ngram_first_words = frozenset(g[0] for g in self.ngrams)

        self._regexes = []
        for source in self.regex_sources:
            try:
                self._regexes.append(re.compile(source, re.IGNORECASE))
            except re.error as e:
                raise BanlistError(f"Invalid regex pattern {source!r}: {e}") from e
        self._regex_prefilter = None
        if self._regexes:
            try:
                self._regex_prefilter = re.compile(
                    "|".join(f"(?:{s})" for s in self.regex_sources), re.IGNORECASE
                )
            except re.error:
                # inline global flags or duplicate group names cannot be joined
                self._regex_prefilter = None

    # --- identity ---

    def __len__(self) -> int:
        return len(self.phrases) + len(self.ngrams) + len(self.regex_sources)

    def kind_of(self, pattern_id: int) -> Kind:
        if pattern_id < len(self.phrases):
            return "phrase"
        if pattern_id < len(self.phrases) + len(self.ngrams):
            return "ngram"
        if pattern_id < len(self):
            return "regex"
        raise IndexError(f"pattern_id {pattern_id} out of range")

    def pattern_text(self, pattern_id: int) -> str:
        kind = self.kind_of(pattern_id)
        if kind == "phrase":
            return self.phrases[pattern_id]
        if kind == "ngram":
            return " ".join(self.ngrams[pattern_id - len(self.phrases)])
        return self.regex_sources[pattern_id - len(self.phrases) - len(self.ngrams)]

    def to_document(self) -> BanlistDocument:
        return BanlistDocument(
            slop_phrases=list(self.phrases),
            ngrams=[list(g) for g in self.ngrams],
            regex_patterns=list(self.regex_sources),
            whitelist=sorted(self.whitelist),
        )

    # --- matching ---

    def _phrase_matches(self, text: str, folded: str) -> Iterable[PatternMatch]:
        if self._automaton is None:
            return
        for end_index, (local_id, length) in self._automaton.iter(folded):
            start, end = end_index - length + 1, end_index + 1
            phrase = self._folded_phrases[local_id]
            if is_word_char(phrase[0]) and start > 0 and is_word_char(text[start - 1]):
                continue
            if is_word_char(phrase[-1]) and end < len(text) and is_word_char(text[end]):
                continue
            yield PatternMatch("phrase", local_id, start, end, self.phrases[local_id])

    def _ngram_matches(self, text: str) -> Iterable[PatternMatch]:
        if not self.ngrams:
            return
        stream = content_words(text, min_word_len=self.min_word_len, remove_stopwords=True)
        words = [w.text for w in stream]
        for n in self._ngram_lengths:
            for i in range(len(words) - n + 1):
                pid = self._ngram_ids.get(tuple(words[i:i + n]))
                if pid is not None:
                    yield PatternMatch(
                        "ngram", pid, stream[i].start, stream[i + n - 1].end, self.pattern_text(pid)
                    )

    def _regex_matches(self, text: str) -> Iterable[PatternMatch]:
        if not self._regexes:
            return
        if self._regex_prefilter is not None and self._regex_prefilter.search(text) is None:
            return
        offset = len(self.phrases) + len(self.ngrams)
        for i, rx in enumerate(self._regexes):
            pos = 0
            while pos <= len(text):
                m = rx.search(text, pos)
                if m is None:
                    break
                if m.end() > m.start():
                    yield PatternMatch("regex", offset + i, m.start(), m.end(), self.regex_sources[i])
                pos = m.start() + 1

    def find_all(self, text: str, overlapping: bool = True) -> list[PatternMatch]:
        """
        Every match in text, ordered by (start, longest, kind, id).
        With overlapping=False a greedy left-to-right pass keeps disjoint matches only.
        """
        if not text or not len(self):
            return []
        matches = [
            *self._phrase_matches(text, fold_case(text)),
            *self._ngram_matches(text),
            *self._regex_matches(text),
        ]
        matches.sort(key=PatternMatch.sort_key)
        if overlapping:
            return matches
        kept, last_end = [], 0
        for m in matches:
            if m.start >= last_end:
                kept.append(m)
                last_end = m.end
        return kept

    def count(self, text: str) -> int:
        """Number of non-overlapping banned occurrences."""
        return len(self.find_all(text, overlapping=False))

    def initiates(self, token_text: str, context: str = "") -> bool:
        """
        Whether appending token_text to context would start (or complete) a
        banned sequence. Used to keep banned initiators out of FTPO chosen sets.

        A token's trailing word counts as a prefix of a longer banned word
        only while it is open: trailing whitespace, or more text after the
        word, closes it (" the" may grow into "theater", "the " cannot).
        """
        folded = fold_case(token_text).lstrip()
        stripped = folded.rstrip()
        if not stripped:
            return False
        closed = len(stripped) < len(folded)

        tail = context[-_INITIATOR_CONTEXT_CHARS:]
        if any(m.end > len(tail) for m in self.find_all(tail + token_text)):
            return True

        for phrase in self._folded_phrases:
            if phrase.startswith(stripped):
                cut = len(stripped)
                breaks_word = closed and cut < len(phrase) and is_word_char(stripped[-1]) and is_word_char(phrase[cut])
                if not breaks_word:
                    return True
            if stripped.startswith(phrase):
                rest = stripped[len(phrase):]
                if not rest or not is_word_char(phrase[-1]) or not is_word_char(rest[0]):
                    return True

        word = WORD_RE.match(stripped)
        if word is not None and word.start() == 0:
            w = _normalize_word(word.group())
            if w in self._ngram_first_words:
                return True
            open_word = not closed and word.end() == len(stripped)
            if open_word and len(w) >= self.min_word_len and any(f.startswith(w) for f in self._ngram_first_words):
                return True
        return False


def compile_banlist(
    phrases: Iterable[str] = (),
    ngrams: Iterable[Union[Sequence[str], str]] = (),
    regex_sources: Iterable[str] = (),
    whitelist: Iterable[str] = (),
    min_word_len: int = 3,
) -> Banlist:
    """
    Compile a Banlist.

    Raises:
        BanlistError: empty phrase, malformed n-gram, n-gram word that is a
            stopword or shorter than min_word_len, or invalid regex
    """
    white = {fold_case(w.strip()) for w in whitelist if w and w.strip()}
    stopwords = load_stopwords()

    kept_phrases, seen = [], set()
    for phrase in phrases:
        if not phrase or not phrase.strip():
            raise BanlistError("Empty phrase in banlist")
        key = fold_case(phrase)
        if key in seen or key.strip() in white:
            continue
        seen.add(key)
        kept_phrases.append(phrase)

    kept_ngrams, seen_grams = [], set()
    for raw in ngrams:
        words = raw.split() if isinstance(raw, str) else list(raw)
        gram = tuple(_normalize_word(w) for w in words)
        if not 2 <= len(gram) <= 3:
            raise BanlistError(f"N-gram {raw!r} must have 2 or 3 words")
        for w in gram:
            if w in stopwords:
                raise BanlistError(f"N-gram {raw!r} contains stopword {w!r}; n-grams are stopword-stripped")
            if len(w) < min_word_len or WORD_RE.fullmatch(w) is None:
                raise BanlistError(
                    f"N-gram {raw!r} word {w!r} is not a content word of length >= {min_word_len}"
                )
        if gram in seen_grams or " ".join(gram) in white:
            continue
        seen_grams.add(gram)
        kept_ngrams.append(gram)

    kept_regexes = list(dict.fromkeys(regex_sources))
    banlist = Banlist(kept_phrases, kept_ngrams, kept_regexes, white, min_word_len)
    logger.debug(
        f"Compiled banlist: {len(kept_phrases)} phrases, {len(kept_ngrams)} ngrams, "
        f"{len(kept_regexes)} regexes, {len(white)} whitelisted"
    )
    return banlist


def banlist_from_document(doc: BanlistDocument, min_word_len: int = 3) -> Banlist:
    return compile_banlist(doc.slop_phrases, doc.ngrams, doc.regex_patterns, doc.whitelist, min_word_len)


def load_banlist_document(path: Union[str, Path]) -> BanlistDocument:
    path = Path(path)
    try:
        return BanlistDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise BanlistError(f"Banlist file not found: {path}") from e
    except ValidationError as e:
        raise BanlistError(f"Malformed banlist {path}: {e}") from e


def write_banlist_document(doc: BanlistDocument, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(doc.model_dump(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def char_to_token(token_spans: Sequence[Span], char_pos: int, _starts: Optional[list[int]] = None) -> int:
    """
    Index of the token whose span contains char_pos.

    Raises:
        ValueError: char_pos outside [0, total text length)
    """
    total = token_spans[-1][1] if token_spans else 0
    if not 0 <= char_pos < total:
        raise ValueError(f"char_pos {char_pos} outside text of length {total}")
    starts = _starts if _starts is not None else [s for s, _ in token_spans]
    idx = bisect_right(starts, char_pos) - 1
    while idx >= 0 and token_spans[idx][1] <= char_pos:
        idx -= 1
    if idx < 0:
        raise ValueError(f"token spans do not cover char_pos {char_pos}")
    return idx


def scan(
    banlist: Banlist,
    text: str,
    token_spans: Sequence[Span],
    ignore: Iterable[tuple[int, int]] = (),
) -> Optional[Violation]:
    """
    Earliest violation whose (start token, pattern id) is not ignored.
    Ties: longest match first, then phrase < ngram < regex.
    """
    ignore = ignore if isinstance(ignore, (set, frozenset)) else set(ignore)
    starts = [s for s, _ in token_spans]
    for m in banlist.find_all(text):
        token_index = char_to_token(token_spans, m.start, starts)
        if (token_index, m.pattern_id) in ignore:
            continue
        return Violation(m.kind, m.pattern_id, m.char_span, token_index, m.pattern)
    return None
