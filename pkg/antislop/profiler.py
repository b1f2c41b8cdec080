"""
Slop profiler - over-representation of words, bigrams and trigrams in a
generated corpus relative to a human baseline.

f(p) is occurrences per million words; rho(p) = f_llm(p) / f_human(p).
Patterns the human baseline never uses are "nodict" and are ranked by
f_llm alone.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel, Field

from antislop.error_handling import ConfigError, DatasetError
from antislop.models import BanlistDocument, CorpusDocument
from antislop.text_utils import content_words, fold_case, iter_words, load_stopwords, ngrams

logger = logging.getLogger(__name__)

PatternKind = Literal["word", "bigram", "trigram"]
KINDS: tuple[PatternKind, ...] = ("word", "bigram", "trigram")
NGRAM_SIZE = {"word": 1, "bigram": 2, "trigram": 3}
PER_MILLION = 1_000_000


@dataclass
class FrequencyTable:
    """
    Occurrence counts for one pattern kind. Tables built from a frequency
    file carry `frequencies` (per million) instead of counts.
    """
    kind: PatternKind
    counts: Counter = field(default_factory=Counter)
    total_tokens: int = 0
    prompt_ids: dict[str, set[str]] = field(default_factory=dict)
    frequencies: Optional[dict[str, float]] = None

    def per_million(self, pattern: str) -> float:
        if self.frequencies is not None:
            return self.frequencies.get(pattern, 0.0)
        if not self.total_tokens:
            return 0.0
        return self.counts.get(pattern, 0) * PER_MILLION / self.total_tokens

    def n_prompts(self, pattern: str) -> int:
        return len(self.prompt_ids.get(pattern, ()))

    def patterns(self) -> list[str]:
        source = self.frequencies if self.frequencies is not None else self.counts
        return sorted(source)

    def merge(self, other: "FrequencyTable") -> "FrequencyTable":
        """Combine tables counted over disjoint document sets. Commutative."""
        if other.kind != self.kind:
            raise ValueError(f"cannot merge {self.kind} table with {other.kind} table")
        if self.frequencies is not None or other.frequencies is not None:
            raise ValueError("frequency-file tables cannot be merged")
        prompt_ids = {p: set(ids) for p, ids in self.prompt_ids.items()}
        for p, ids in other.prompt_ids.items():
            prompt_ids.setdefault(p, set()).update(ids)
        return FrequencyTable(
            kind=self.kind,
            counts=self.counts + other.counts,
            total_tokens=self.total_tokens + other.total_tokens,
            prompt_ids=prompt_ids,
        )

    @classmethod
    def from_per_million(cls, kind: PatternKind, frequencies: dict[str, float]) -> "FrequencyTable":
        return cls(kind=kind, frequencies=dict(frequencies))


def _as_pairs(corpus: Iterable) -> list[tuple[str, str]]:
    pairs = []
    for doc in corpus:
        if isinstance(doc, CorpusDocument):
            pairs.append((doc.prompt_id, doc.text))
        else:
            prompt_id, text = doc
            pairs.append((str(prompt_id), text))
    return pairs


def count_patterns(
    corpus: Iterable,
    kind: PatternKind,
    min_word_len: int = 3,
    stopword_removal: bool = True,
) -> FrequencyTable:
    """
    Count patterns of one kind over (prompt_id, text) documents.

    Words are lowercased and punctuation-stripped; words shorter than
    min_word_len never form patterns. total_tokens counts every word
    before filtering.

    Raises:
        DatasetError: empty corpus
    """
    docs = _as_pairs(corpus)
    if not docs:
        raise DatasetError("cannot profile an empty corpus")
    n = NGRAM_SIZE[kind]
    table = FrequencyTable(kind=kind)
    for prompt_id, text in docs:
        table.total_tokens += sum(1 for _ in iter_words(text))
        stream = [w.text for w in content_words(text, min_word_len, stopword_removal)]
        grams = stream if n == 1 else [" ".join(g) for g in ngrams(stream, n)]
        table.counts.update(grams)
        for g in set(grams):
            table.prompt_ids.setdefault(g, set()).add(prompt_id)
    return table


class ProfileEntry(BaseModel):
    pattern: str
    kind: PatternKind
    count: int = Field(ge=0)
    f_llm: float = Field(ge=0)
    f_human: float = Field(ge=0)
    ratio: Optional[float] = None
    cls: Literal["dict", "nodict"]
    n_prompts: int = Field(ge=0)


class Fingerprint(BaseModel):
    """Ranked most over-represented patterns, best first."""
    words: list[str] = Field(default_factory=list)
    bigrams: list[str] = Field(default_factory=list)
    trigrams: list[str] = Field(default_factory=list)

    def ranked(self) -> dict[str, list[str]]:
        return {"word": self.words, "bigram": self.bigrams, "trigram": self.trigrams}


class SlopProfile(BaseModel):
    entries: dict[str, list[ProfileEntry]] = Field(default_factory=dict)
    fingerprint: Fingerprint = Field(default_factory=Fingerprint)

    def ranked(self, kind: PatternKind) -> list[ProfileEntry]:
        return self.entries.get(kind, [])


def compute_ratios(llm: FrequencyTable, human: FrequencyTable, min_count: int = 1) -> list[ProfileEntry]:
    """
    Ratios for every LLM pattern seen at least min_count times.
    Returns dict entries by ratio descending, then nodict entries by f_llm
    descending; ties broken by pattern text.
    """
    if llm.kind != human.kind:
        raise ValueError(f"kind mismatch: {llm.kind} vs {human.kind}")
    dict_entries, nodict_entries = [], []
    for pattern, count in llm.counts.items():
        if count < min_count:
            continue
        f_llm = llm.per_million(pattern)
        f_human = human.per_million(pattern)
        entry = ProfileEntry(
            pattern=pattern,
            kind=llm.kind,
            count=count,
            f_llm=f_llm,
            f_human=f_human,
            ratio=f_llm / f_human if f_human > 0 else None,
            cls="dict" if f_human > 0 else "nodict",
            n_prompts=llm.n_prompts(pattern),
        )
        (dict_entries if entry.cls == "dict" else nodict_entries).append(entry)
    dict_entries.sort(key=lambda e: (-e.ratio, e.pattern))
    nodict_entries.sort(key=lambda e: (-e.f_llm, e.pattern))
    return dict_entries + nodict_entries


def build_fingerprint(
    entries: dict[str, list[ProfileEntry]],
    n_words: int = 120,
    n_bigrams: int = 40,
    n_trigrams: int = 40,
    min_prompts: int = 3,
) -> Fingerprint:
    """Top over-represented patterns; n-grams need support from min_prompts prompts."""
    def top(kind: PatternKind, size: int) -> list[str]:
        pool = entries.get(kind, [])
        if kind != "word":
            pool = [e for e in pool if e.n_prompts >= min_prompts]
        return [e.pattern for e in pool[:size]]

    return Fingerprint(
        words=top("word", n_words),
        bigrams=top("bigram", n_bigrams),
        trigrams=top("trigram", n_trigrams),
    )


def _cap_pool(table: FrequencyTable, cap: Optional[int]) -> FrequencyTable:
    """Keep the `cap` most frequent patterns (ties by text)."""
    if cap is None or len(table.counts) <= cap:
        return table
    kept = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return FrequencyTable(
        kind=table.kind,
        counts=Counter(dict(kept)),
        total_tokens=table.total_tokens,
        prompt_ids={p: table.prompt_ids[p] for p, _ in kept},
    )


def build_profile(
    corpus: Sequence,
    human: dict[str, FrequencyTable],
    min_word_len: int = 3,
    min_count: int = 2,
    ngram_stopword_removal: bool = True,
    fingerprint_sizes: tuple[int, int, int] = (120, 40, 40),
    min_prompts: int = 3,
    caps: Optional[dict[str, int]] = None,
) -> SlopProfile:
    """
    Full profile of a corpus against per-kind human baselines.
    Kinds without a baseline table are skipped.
    """
    caps = caps or {}
    entries: dict[str, list[ProfileEntry]] = {}
    for kind in KINDS:
        if kind not in human:
            continue
        stopwords_off = kind == "word" or not ngram_stopword_removal
        llm = count_patterns(corpus, kind, min_word_len, stopword_removal=not stopwords_off)
        llm = _cap_pool(llm, caps.get(kind))
        entries[kind] = compute_ratios(llm, human[kind], min_count=min_count)
        logger.info(f"Profiled {kind}s: {len(entries[kind])} patterns over {llm.total_tokens} words")
    fingerprint = build_fingerprint(entries, *fingerprint_sizes, min_prompts=min_prompts)
    return SlopProfile(entries=entries, fingerprint=fingerprint)


def _valid_ngram(words: list[str], min_word_len: int) -> bool:
    stopwords = load_stopwords()
    return all(len(w) >= min_word_len and w not in stopwords for w in words)


def build_banlist(
    profile: SlopProfile,
    quotas: dict[str, int],
    whitelist: Iterable[str] = (),
    existing: Optional[BanlistDocument] = None,
    min_prompts: int = 3,
    min_word_len: int = 3,
) -> BanlistDocument:
    """
    Banlist additions: top-N per class and kind, skipping whitelisted and
    already-banned patterns (and backfilling from further down the ranking).
    N-grams need support from at least min_prompts prompts.

    quotas keys: dict_words, nodict_words, dict_bigrams, nodict_bigrams,
    dict_trigrams, nodict_trigrams (missing keys count as 0).
    """
    white = {fold_case(w.strip()) for w in whitelist}
    banned_words = {fold_case(p) for p in (existing.slop_phrases if existing else [])}
    banned_grams = {" ".join(fold_case(w) for w in g) for g in (existing.ngrams if existing else [])}

    words: list[str] = []
    grams: list[list[str]] = []
    for kind in KINDS:
        label = {"word": "words", "bigram": "bigrams", "trigram": "trigrams"}[kind]
        for cls in ("dict", "nodict"):
            quota = quotas.get(f"{cls}_{label}", 0)
            if quota <= 0:
                continue
            taken = 0
            for entry in profile.ranked(kind):
                if taken >= quota:
                    break
                if entry.cls != cls or entry.pattern in white:
                    continue
                if kind == "word":
                    if entry.pattern in banned_words:
                        continue
                    banned_words.add(entry.pattern)
                    words.append(entry.pattern)
                else:
                    split = entry.pattern.split()
                    if (entry.n_prompts < min_prompts or entry.pattern in banned_grams
                            or not _valid_ngram(split, min_word_len)):
                        continue
                    banned_grams.add(entry.pattern)
                    grams.append(split)
                taken += 1
    return BanlistDocument(slop_phrases=words, ngrams=grams)


def iterate_profile(
    previous_banlist: BanlistDocument,
    new_corpus: Sequence,
    human: dict[str, FrequencyTable],
    quotas_subsequent: dict[str, int],
    whitelist: Iterable[str] = (),
    **profile_kwargs,
) -> tuple[BanlistDocument, SlopProfile]:
    """
    Re-profile a corpus generated under previous_banlist and append only
    patterns not already banned.
    """
    min_prompts = profile_kwargs.get("min_prompts", 3)
    min_word_len = profile_kwargs.get("min_word_len", 3)
    profile = build_profile(new_corpus, human, **profile_kwargs)
    additions = build_banlist(
        profile, quotas_subsequent, whitelist,
        existing=previous_banlist, min_prompts=min_prompts, min_word_len=min_word_len,
    )
    return previous_banlist.merge(additions), profile


def fingerprint_distance(fp_a: Fingerprint, fp_b: Fingerprint) -> float:
    """
    Average rank distance over the union of fingerprint patterns.
    A pattern missing from one list takes rank len(list) + 1 there.
    """
    total, n = 0.0, 0
    for kind, list_a in fp_a.ranked().items():
        list_b = fp_b.ranked()[kind]
        rank_a = {p: i + 1 for i, p in enumerate(list_a)}
        rank_b = {p: i + 1 for i, p in enumerate(list_b)}
        for p in set(rank_a) | set(rank_b):
            ra = rank_a.get(p, len(list_a) + 1)
            rb = rank_b.get(p, len(list_b) + 1)
            total += abs(ra - rb)
            n += 1
    return total / n if n else 0.0


def distance_matrix(fingerprints: dict[str, Fingerprint]) -> pd.DataFrame:
    names = sorted(fingerprints)
    return pd.DataFrame(
        [[fingerprint_distance(fingerprints[a], fingerprints[b]) for b in names] for a in names],
        index=names,
        columns=names,
    )


def load_human_baseline(path: Union[str, Path], kinds: Sequence[PatternKind], key: str) -> dict[str, FrequencyTable]:
    """
    Read a (pattern, per_million) TSV. Rows are assigned to kinds by their
    word count, so one file can hold both bigrams and trigrams.

    Raises:
        ConfigError: missing file or columns (message names the config key)
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"`{key}` points to a missing file: {path}")
    df = pd.read_csv(path, sep="\t", dtype={"pattern": str}, keep_default_na=False)
    if not {"pattern", "per_million"} <= set(df.columns):
        raise ConfigError(f"{path} (`{key}`) needs columns pattern and per_million")
    df["pattern"] = df["pattern"].map(lambda s: " ".join(fold_case(s).split()))
    df["n"] = df["pattern"].str.split().str.len()
    tables = {}
    for kind in kinds:
        rows = df[df["n"] == NGRAM_SIZE[kind]]
        tables[kind] = FrequencyTable.from_per_million(
            kind, dict(zip(rows["pattern"], rows["per_million"].astype(float)))
        )
    return tables


def write_profile(profile: SlopProfile, path: Union[str, Path]) -> None:
    Path(path).write_text(profile.model_dump_json(indent=2) + "\n", encoding="utf-8")
