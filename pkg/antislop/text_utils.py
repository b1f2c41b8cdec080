"""
Text helpers shared by the pattern engine, the profiler and the metrics.
One tokenizer, so a banlist derived from a profile matches at generation time.
"""

import re
from functools import lru_cache
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

STOPWORDS_FILE = Path(__file__).parent / "data" / "stopwords_en_v1.txt"

WORD_RE = re.compile(r"\w+(?:['’]\w+)*")
_WORD_CHAR_RE = re.compile(r"\w")


class Word(NamedTuple):
    """A normalized word and its half-open character span in the source text."""
    text: str
    start: int
    end: int


def fold_case(text: str) -> str:
    """Lowercase scalar by scalar, keeping the string length (and offsets) intact."""
    out = []
    for ch in text:
        low = ch.lower()
        out.append(low if len(low) == 1 else ch)
    return "".join(out)


def is_word_char(ch: str) -> bool:
    return bool(_WORD_CHAR_RE.match(ch))


@lru_cache(maxsize=1)
def load_stopwords() -> frozenset[str]:
    """Load the pinned English stopword list."""
    with open(STOPWORDS_FILE, "r", encoding="utf-8") as f:
        words = [
            line.strip() for line in f
            if line.strip() and not line.startswith("#")
        ]
    return frozenset(words)


def iter_words(text: str) -> Iterator[Word]:
    """Yield lowercased, punctuation-stripped words with their spans."""
    for m in WORD_RE.finditer(text):
        word = fold_case(m.group()).replace("’", "'")
        yield Word(word, m.start(), m.end())


def content_words(
    text: str,
    min_word_len: int = 3,
    remove_stopwords: bool = True,
) -> list[Word]:
    """Word stream used for n-grams: stopwords and short words removed."""
    stopwords = load_stopwords() if remove_stopwords else frozenset()
    return [
        w for w in iter_words(text)
        if len(w.text) >= min_word_len and w.text not in stopwords
    ]


def word_list(text: str) -> list[str]:
    return [w.text for w in iter_words(text)]


def ngrams(seq: Sequence, n: int) -> Iterator[tuple]:
    for i in range(len(seq) - n + 1):
        yield tuple(seq[i:i + n])
