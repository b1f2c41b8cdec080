"""
Backtracking sampler.

Generate in chunks; after every chunk scan the decoded text. On a
violation, rewind to the token where the banned sequence starts, attenuate
that token by the soft-ban rule, resample from the cached candidates, and
either substitute (backtrack) or let the pattern through with an ignore
mark. Every handled violation is recorded as a BacktrackEvent.
"""

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from antislop.backends import ModelBackend
from antislop.error_handling import BackendUnavailableError, InvariantError, TransientBackendError
from antislop.logging_config import StructuredLogger
from antislop.models import BacktrackEvent, ChunkRequest, GenerationStats, SamplerConfig
from antislop.patterns import Banlist, Violation, scan
from antislop.sampling import draw_at, resample_distribution
from antislop.trace import TokenTrace

logger = logging.getLogger(__name__)

# exp() of very negative logprobs underflows to 0
_MIN_LOGPROB = -700.0


@dataclass
class GenerationResult:
    text: str
    events: list[BacktrackEvent] = field(default_factory=list)
    stats: GenerationStats = field(default_factory=GenerationStats)
    trace: TokenTrace = field(default_factory=TokenTrace)
    generation_id: str = "0"


def make_rng(seed: int, key: str) -> np.random.Generator:
    """
    RNG keyed by (seed, key). Keys are derived from the generation id plus a
    token position, so draws never depend on thread scheduling or on how
    many draws came before.
    """
    digest = hashlib.sha256(f"{seed}_{key}".encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "big"))


def detect_after_chunk(trace: TokenTrace, banlist: Banlist) -> Optional[Violation]:
    """Scan the whole generated text, skipping ignore-marked occurrences."""
    try:
        return scan(banlist, trace.text, trace.spans, trace.ignore_marks)
    except ValueError as e:
        raise InvariantError(f"violation could not be mapped onto the trace: {e}") from e


def _cut_at_stop(trace: TokenTrace, stop_sequences: list[str]) -> bool:
    """Drop everything from the token reaching into the first stop sequence."""
    hits = [trace.text.find(s) for s in stop_sequences if s]
    hits = [h for h in hits if h >= 0]
    if not hits:
        return False
    cut = min(hits)
    keep = sum(1 for _, end in trace.spans if end <= cut)
    trace.truncate(keep)
    return True


def _handle_violation(
    trace: TokenTrace,
    violation: Violation,
    config: SamplerConfig,
    rng_seed: int,
    stats: GenerationStats,
    generation_id: str,
) -> BacktrackEvent:
    """
    Resolve one violation. The resampling uniforms are keyed to (position,
    attempt), so every ban strength sees the same random numbers at the same
    place: a let-through at a stronger ban implies one at any weaker ban, and
    the substitute depends only on the tokens that are not rejected.
    """
    pos = violation.start_token_index
    if not 0 <= pos < len(trace):
        raise InvariantError(f"violation starts at token {pos}, outside the generated trace")
    key = (pos, violation.pattern_id)
    rejected = trace.tokens[pos]
    rejected_id = trace.token_ids[pos]
    cands = trace.candidates[pos]
    ids = {c.text: c.id for c in cands}

    def event(resampled: str, chosen: list[str], let_through: bool) -> BacktrackEvent:
        return BacktrackEvent(
            generation_id=generation_id,
            position=pos,
            pattern_id=violation.pattern_id,
            pattern=violation.pattern,
            kind=violation.kind,
            rejected_token_id=rejected_id,
            rejected_text=rejected,
            chosen_token_ids=[ids.get(t) for t in chosen],
            chosen_texts=chosen,
            resampled_token_id=ids.get(resampled),
            resampled_text=resampled,
            let_through=let_through,
            context_text=trace.text_before(pos),
        )

    def let_through(chosen: list[str]) -> BacktrackEvent:
        trace.ignore_marks.add(key)
        stats.lets_through += 1
        return event(rejected, chosen, True)

    if config.ban_strength == 0 and not config.force_backtrack:
        # nothing to attenuate: unconstrained behaviour, no RNG consumed
        return let_through([])
    if key in trace.triggered and not config.force_backtrack:
        return let_through([])
    trace.triggered.add(key)

    counts = trace.attenuated[pos]
    counts[rejected] = counts.get(rejected, 0) + 1
    dist = resample_distribution(
        [(c.text, math.exp(max(c.logprob, _MIN_LOGPROB))) for c in cands],
        rejected,
        s=config.ban_strength,
        min_p=config.min_p,
        temperature=config.temperature,
        top_p=config.top_p,
        top_k=config.top_k,
        force_backtrack=config.force_backtrack,
        attenuated=counts,
    )
    chosen = [t for t, _ in dist if t != rejected]
    attempt = sum(counts.values())
    u, v = make_rng(rng_seed, f"{generation_id}:{pos}:{attempt}").random(2)
    new_token = draw_at(dist, float(u), float(v), first=rejected)
    if new_token == rejected:
        return let_through(chosen)

    ev = event(new_token, chosen, False)
    stats.tokens_discarded += trace.replace(pos, new_token, ids.get(new_token))
    stats.tokens_generated += 1
    stats.backtracks += 1
    return ev


def generate(
    backend: ModelBackend,
    prompt: str,
    banlist: Banlist,
    config: SamplerConfig,
    rng_seed: int,
    generation_id: str = "0",
    structured_logger: Optional[StructuredLogger] = None,
) -> GenerationResult:
    """
    Generate one text with backtracking.

    Args:
        backend: Chunk source (mock or HTTP)
        prompt: Fully templated prompt; never scanned
        banlist: Compiled patterns to suppress
        config: Sampler knobs
        rng_seed: Run seed; combined with generation_id and token positions for every draw
        generation_id: Stable id of this generation
        structured_logger: Receives backtrack and summary events

    Returns:
        GenerationResult with final text, events, stats and the trace

    Raises:
        BackendUnavailableError: backend failed after retries (carries the token position)
        InvariantError: a violation could not be placed on the trace
    """
    trace = TokenTrace()
    events: list[BacktrackEvent] = []
    stats = GenerationStats()
    start = time.perf_counter()
    finished = False

    while not finished and len(trace) < config.max_new_tokens:
        req = ChunkRequest(
            prompt_text=prompt + trace.text,
            max_tokens=min(config.chunk_size, config.max_new_tokens - len(trace)),
            temperature=config.temperature,
            top_p=config.top_p,
            top_k=config.top_k,
            min_p=config.min_p,
            top_logprobs=config.top_logprobs_count,
            stop_sequences=list(config.stop_sequences),
            seed=int(make_rng(rng_seed, f"{generation_id}:chunk:{len(trace)}").integers(0, 2**31 - 1)),
        )
        try:
            resp = backend.next_chunk(req)
        except (TransientBackendError, BackendUnavailableError) as e:
            raise BackendUnavailableError(
                str(e), attempts=getattr(e, "attempts", 0), position=len(trace)
            ) from e
        stats.backend_calls += 1
        stats.tokens_generated += len(resp.tokens)
        trace.extend(resp.tokens)
        finished = resp.finish_reason != "length" or not resp.tokens
        if config.stop_sequences and _cut_at_stop(trace, config.stop_sequences):
            finished = True

        while (violation := detect_after_chunk(trace, banlist)) is not None:
            ev = _handle_violation(trace, violation, config, rng_seed, stats, generation_id)
            events.append(ev)
            if structured_logger is not None:
                structured_logger.log_backtrack(ev)
            if not ev.let_through:
                finished = False

    trace.check_integrity()
    stats.tokens_kept = len(trace)
    stats.elapsed_ms = (time.perf_counter() - start) * 1000
    if structured_logger is not None:
        structured_logger.log_generation(generation_id, stats)
    return GenerationResult(trace.text, events, stats, trace, generation_id)
