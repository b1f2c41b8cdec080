"""
Output metrics: banlist suppression and lexical diversity.

Diversity uses the profiler's tokenizer (lowercased, punctuation-stripped
words) so both sides of a comparison see the same word stream.
"""

import logging
import math
from collections import Counter
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import hypergeom

from antislop.error_handling import DatasetError
from antislop.models import CorpusDocument
from antislop.patterns import Banlist
from antislop.text_utils import ngrams, word_list

logger = logging.getLogger(__name__)

COMPONENTS = ("mattr", "root_ttr", "hdd", "distinct_1", "distinct_2", "distinct_3")


def _texts(corpus: Iterable[Union[CorpusDocument, str]]) -> list[str]:
    texts = [doc.text if isinstance(doc, CorpusDocument) else doc for doc in corpus]
    if not texts:
        raise DatasetError("corpus is empty")
    return texts


class SuppressionReport(BaseModel):
    rate: float = Field(ge=0.0, le=100.0, description="Percent reduction of banned hits per 1k chars")
    baseline_per_1k: float
    treated_per_1k: float
    baseline_hits: int
    treated_hits: int
    baseline_zero: bool = False


def hits_per_1k(texts: list[str], banlist: Banlist) -> tuple[int, float]:
    chars = sum(len(t) for t in texts)
    if chars == 0:
        raise DatasetError("corpus has no text")
    hits = sum(banlist.count(t) for t in texts)
    return hits, hits * 1000 / chars


def suppression_rate(
    baseline: Iterable[Union[CorpusDocument, str]],
    treated: Iterable[Union[CorpusDocument, str]],
    banlist: Banlist,
) -> SuppressionReport:
    """
    100 * (1 - f_treated / f_baseline), clamped to [0, 100], with f measured
    in non-overlapping banned occurrences per 1,000 characters. A baseline
    with no occurrences gives 0 and sets baseline_zero.
    """
    base_hits, base_rate = hits_per_1k(_texts(baseline), banlist)
    treated_hits, treated_rate = hits_per_1k(_texts(treated), banlist)
    if base_rate == 0:
        logger.warning("Baseline corpus contains no banned patterns; suppression rate is undefined")
        rate, zero = 0.0, True
    else:
        rate, zero = min(max(100.0 * (1.0 - treated_rate / base_rate), 0.0), 100.0), False
    return SuppressionReport(
        rate=rate,
        baseline_per_1k=base_rate,
        treated_per_1k=treated_rate,
        baseline_hits=base_hits,
        treated_hits=treated_hits,
        baseline_zero=zero,
    )


class DiversityReport(BaseModel):
    mattr: float = Field(ge=0.0, le=1.0)
    root_ttr: float = Field(gt=0.0)
    hdd: float = Field(ge=0.0, le=1.0)
    distinct_1: float = Field(ge=0.0, le=1.0)
    distinct_2: float = Field(ge=0.0, le=1.0)
    distinct_3: float = Field(ge=0.0, le=1.0)
    aggregate: float
    normalized: bool = False
    mattr_window: int
    mattr_full_text: bool = Field(default=False, description="Fewer words than the window; plain TTR used")
    n_words: int

    def components(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in COMPONENTS}


def mattr(words: list[str], window: int = 500) -> tuple[float, bool]:
    """
    Moving-average type-token ratio over every window of `window` words
    (step 1). Shorter texts fall back to plain TTR and report True.
    """
    if not words:
        raise DatasetError("cannot compute MATTR of an empty word list")
    if len(words) < window:
        return len(set(words)) / len(words), True
    counts = Counter(words[:window])
    total = len(counts)
    for i in range(window, len(words)):
        out, new = words[i - window], words[i]
        counts[out] -= 1
        if counts[out] == 0:
            del counts[out]
        counts[new] += 1
        total += len(counts)
    return total / ((len(words) - window + 1) * window), False


def root_ttr(words: list[str]) -> float:
    return len(set(words)) / math.sqrt(len(words))


def hdd(words: list[str], sample_size: int = 42) -> float:
    """
    Expected type-token ratio of a random draw of sample_size words without
    replacement: each type contributes P(it appears in the draw) / draws.
    """
    n = len(words)
    draws = min(sample_size, n)
    freqs = np.array(list(Counter(words).values()))
    p_absent = hypergeom.pmf(0, n, freqs, draws)
    return min(float(np.sum(1.0 - p_absent) / draws), 1.0)


def distinct_n(docs: list[list[str]], n: int) -> float:
    """Unique n-grams over total n-grams; n-grams never cross documents."""
    grams = [g for words in docs for g in ngrams(words, n)]
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def aggregate_score(components: dict[str, float], baseline: Optional[dict[str, float]] = None) -> float:
    """
    Mean of the components. With a baseline each component is first scaled
    so the baseline scores 100; components the baseline scores 0 on are left
    out.
    """
    if baseline is None:
        return float(np.mean([components[k] for k in COMPONENTS]))
    # ratio first: a corpus scored against itself lands on exactly 100
    scaled = [100.0 * (components[k] / baseline[k]) for k in COMPONENTS if baseline[k] > 0]
    if not scaled:
        return 0.0
    return float(np.mean(scaled))


def diversity(
    corpus: Iterable[Union[CorpusDocument, str]],
    window: int = 500,
    sample_size: int = 42,
    baseline: Optional[DiversityReport] = None,
) -> DiversityReport:
    """
    Lexical diversity of a corpus. Word-stream measures (MATTR, Root-TTR,
    HD-D) run over the documents concatenated in order; Distinct-n counts
    n-grams within documents.

    Raises:
        DatasetError: empty corpus or no words at all
    """
    docs = [word_list(t) for t in _texts(corpus)]
    words = [w for d in docs for w in d]
    if not words:
        raise DatasetError("corpus contains no words")

    m, full_text = mattr(words, window)
    if full_text:
        logger.warning(f"Corpus has {len(words)} words, fewer than the MATTR window {window}; using plain TTR")
    components = {
        "mattr": m,
        "root_ttr": root_ttr(words),
        "hdd": hdd(words, sample_size),
        "distinct_1": distinct_n(docs, 1),
        "distinct_2": distinct_n(docs, 2),
        "distinct_3": distinct_n(docs, 3),
    }
    return DiversityReport(
        **components,
        aggregate=aggregate_score(components, baseline.components() if baseline else None),
        normalized=baseline is not None,
        mattr_window=window,
        mattr_full_text=full_text,
        n_words=len(words),
    )


def document_rows(
    corpus: Iterable[CorpusDocument],
    banlist: Optional[Banlist] = None,
    window: int = 500,
    sample_size: int = 42,
) -> pd.DataFrame:
    """One row per non-empty document, for external analysis."""
    rows = []
    for doc in corpus:
        words = word_list(doc.text)
        if not words:
            continue
        m, _ = mattr(words, window)
        row = {
            "prompt_id": doc.prompt_id,
            "chars": len(doc.text),
            "words": len(words),
            "mattr": m,
            "root_ttr": root_ttr(words),
            "hdd": hdd(words, sample_size),
            "distinct_1": distinct_n([words], 1),
            "distinct_2": distinct_n([words], 2),
            "distinct_3": distinct_n([words], 3),
        }
        if banlist is not None:
            hits = banlist.count(doc.text)
            row["banned_hits"] = hits
            row["banned_per_1k"] = hits * 1000 / len(doc.text)
        rows.append(row)
    return pd.DataFrame(rows)


class EvalReport(BaseModel):
    suppression: SuppressionReport
    baseline: DiversityReport
    treated: DiversityReport


def evaluate(
    baseline: list[CorpusDocument],
    treated: list[CorpusDocument],
    banlist: Banlist,
    window: int = 500,
    sample_size: int = 42,
) -> EvalReport:
    """Suppression plus both diversity reports, normalized to the baseline."""
    base_div = diversity(baseline, window, sample_size)
    base_div = diversity(baseline, window, sample_size, baseline=base_div)
    treated_div = diversity(treated, window, sample_size, baseline=base_div)
    return EvalReport(
        suppression=suppression_rate(baseline, treated, banlist),
        baseline=base_div,
        treated=treated_div,
    )


def write_rows(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
