"""
FTPO dataset - turn backtracking events into final-token preference samples
(prompt prefix, one rejected token, several chosen alternatives), downsample
skewed groups, and read/write the JSONL dataset.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from antislop.corpus import read_jsonl, write_jsonl
from antislop.models import BacktrackEvent, FtpoSample, SampleSource
from antislop.patterns import Banlist
from antislop.trace import TokenTrace

logger = logging.getLogger(__name__)


def capture_sample(
    event: BacktrackEvent,
    prompt: str,
    banlist: Banlist,
    trace: Optional[TokenTrace] = None,
    min_chosen_tokens: int = 4,
) -> Optional[FtpoSample]:
    """
    One sample per substitution event.

    prompt_text is the prompt plus the generated text before the event
    position. Chosen tokens that would themselves start a banned sequence
    there are dropped. Let-through events and events left with fewer than
    min_chosen_tokens chosen tokens produce nothing.
    """
    if event.let_through:
        return None
    # a trace passed in must be the one the event was raised on, before any later rewind
    prefix = trace.text_before(event.position) if trace is not None else event.context_text

    chosen = []
    seen = {event.rejected_text}
    for ref in event.chosen:
        if ref.text in seen:
            continue
        seen.add(ref.text)
        if banlist.initiates(ref.text, prefix):
            continue
        chosen.append(ref)
    if len(chosen) < min_chosen_tokens:
        return None

    return FtpoSample(
        prompt_text=prompt + prefix,
        rejected=event.rejected,
        chosen=chosen,
        source=SampleSource(
            pattern=event.pattern,
            generation_id=event.generation_id,
            position=event.position,
        ),
    )


def capture_dataset(
    events: Iterable[BacktrackEvent],
    prompts: dict[str, str],
    banlist: Banlist,
    min_chosen_tokens: int = 4,
) -> list[FtpoSample]:
    """
    Capture samples from an event log. `prompts` maps generation_id to the
    templated prompt that generation used; events of unknown generations
    are skipped.
    """
    samples, missing = [], 0
    for event in events:
        prompt = prompts.get(event.generation_id)
        if prompt is None:
            missing += 1
            continue
        sample = capture_sample(event, prompt, banlist, min_chosen_tokens=min_chosen_tokens)
        if sample is not None:
            samples.append(sample)
    if missing:
        logger.warning(f"Skipped {missing} events with no matching generation prompt")
    return samples


def _group_key(sample: FtpoSample) -> str:
    return sample.rejected.text.strip().lower()


def regularize_dataset(
    samples: Sequence[FtpoSample],
    rejected_strength: float,
    chosen_strength: float,
    seed: int,
) -> list[FtpoSample]:
    """
    Downsample over-represented violations. Kept samples stay in input order.

    Rejected: group by rejected token text; a sample in a group of size n
    is kept with probability (n_min / n) ** rejected_strength, where n_min
    is the smallest group. 0 keeps everything; 1 equalizes expected group
    sizes.

    Chosen: rank chosen tokens by global frequency (1 = most frequent); a
    sample is kept with probability (r / r_max) ** chosen_strength, where r
    is the mean rank of its chosen tokens, so samples whose chosen sets are
    dominated by over-frequent tokens are thinned.
    """
    for name, value in (("rejected_strength", rejected_strength), ("chosen_strength", chosen_strength)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {value}")
    if not samples:
        return []

    rng = np.random.default_rng(seed)
    draws = rng.random((len(samples), 2))

    sizes = Counter(_group_key(s) for s in samples)
    n_min = min(sizes.values())
    keep_rejected = np.array([(n_min / sizes[_group_key(s)]) ** rejected_strength for s in samples])

    freq = Counter(c.text for s in samples for c in s.chosen)
    ordered = sorted(freq, key=lambda t: (-freq[t], t))
    rank = {t: i + 1 for i, t in enumerate(ordered)}
    mean_rank = np.array([np.mean([rank[c.text] for c in s.chosen]) for s in samples])
    keep_chosen = (mean_rank / mean_rank.max()) ** chosen_strength

    kept = [
        s for s, (u_rej, u_cho), p_rej, p_cho in zip(samples, draws, keep_rejected, keep_chosen)
        if u_rej < p_rej and u_cho < p_cho
    ]
    logger.info(f"Regularized FTPO dataset: kept {len(kept)} of {len(samples)} samples")
    return kept


def group_sizes(samples: Iterable[FtpoSample]) -> dict[str, int]:
    """Sample count per rejected-token group."""
    return dict(Counter(_group_key(s) for s in samples))


def write_dataset(samples: Iterable[FtpoSample], path: Union[str, Path]) -> int:
    return write_jsonl(samples, path)


def read_dataset(path: Union[str, Path]) -> list[FtpoSample]:
    """
    Raises:
        DatasetError: malformed line, including a rejected token listed as chosen
    """
    return read_jsonl(path, FtpoSample)


def prompts_by_generation(records: Iterable) -> dict[str, str]:
    """generation_id -> prompt from GenerationRecords."""
    return {r.generation_id: r.prompt for r in records}
