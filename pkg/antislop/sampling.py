"""
Distribution math for resampling over cached top-logprob candidates.

Order of transforms (fixed so runs reproduce): attenuate -> renormalize ->
min-p -> temperature -> top-k -> top-p -> renormalize.
"""

import math
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

Distribution = list[tuple[Hashable, float]]

_LN10 = math.log(10.0)


def attenuate(prob: float, s: float) -> float:
    """Soft-ban attenuation: prob * 10^(-10 s)."""
    if not 0.0 < prob <= 1.0:
        raise ValueError(f"prob must be in (0, 1], got {prob}")
    return prob * 10.0 ** (-10.0 * s)


def apply_sampling_filters(
    tokens: Sequence[Hashable],
    probs: Sequence[float],
    min_p: float = 0.0,
    temperature: float = 1.0,
    top_p: float = 1.0,
    top_k: Optional[int] = None,
) -> Distribution:
    """
    Filter a candidate distribution; returns (token, prob) pairs sorted by
    probability descending. top_k=None disables top-k.
    """
    p = np.asarray(probs, dtype=np.float64)
    keep = p > 0
    if not keep.any():
        return []
    tokens = [t for t, k in zip(tokens, keep) if k]
    p = p[keep]
    p = p / p.sum()

    # min-p against the current maximum
    keep = p >= min_p * p.max()
    tokens = [t for t, k in zip(tokens, keep) if k]
    p = p[keep]

    if temperature != 1.0:
        # shift by the max in log space so small probs do not underflow
        logp = np.log(p) / temperature
        p = np.exp(logp - logp.max())
    p = p / p.sum()

    order = np.argsort(-p, kind="stable")
    p = p[order]
    tokens = [tokens[i] for i in order]

    if top_k is not None:
        p = p[:top_k]
        tokens = tokens[:top_k]

    if top_p < 1.0:
        cum = np.cumsum(p / p.sum())
        keep = (cum - p / p.sum()) < top_p
        keep[0] = True
        p = p[keep]
        tokens = [t for t, k in zip(tokens, keep) if k]

    p = p / p.sum()
    return list(zip(tokens, p.tolist()))


def _attenuated_probs(
    candidates: Sequence[tuple[Hashable, float]],
    s: float,
    counts: Mapping[Hashable, int],
) -> np.ndarray:
    logp = np.log(np.asarray([prob for _, prob in candidates], dtype=np.float64))
    for i, (token, _) in enumerate(candidates):
        n = counts.get(token, 0)
        if n:
            logp[i] -= 10.0 * s * n * _LN10
    p = np.exp(logp - logp.max())
    return p / p.sum()


def resample_distribution(
    candidates: Sequence[tuple[Hashable, float]],
    banned_token: Hashable,
    s: float,
    min_p: float,
    temperature: float = 1.0,
    top_p: float = 1.0,
    top_k: Optional[int] = None,
    force_backtrack: bool = False,
    attenuated: Optional[Mapping[Hashable, int]] = None,
) -> Distribution:
    """
    Sampling distribution at a backtrack position.

    Args:
        candidates: Cached (token, prob) pairs at the position
        banned_token: Token that initiated the violation
        s: Ban strength
        attenuated: Attenuation count per token at this position, including
            the current hit on banned_token. Counts compound.
        force_backtrack: Escalate through temperature, min_p, top_p, top_k
            until some token other than the banned (or earlier rejected)
            ones survives

    Returns:
        (token, prob) pairs summing to 1. A result of [(banned_token, 1.0)]
        means the soft ban lets the pattern through.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    tokens = [t for t, _ in candidates]
    if banned_token not in tokens:
        raise ValueError(f"banned token {banned_token!r} not among candidates")
    if any(prob <= 0 for _, prob in candidates):
        raise ValueError("candidate probabilities must be positive")

    counts = dict(attenuated) if attenuated else {banned_token: 1}
    probs = _attenuated_probs(candidates, s, counts)

    if not force_backtrack:
        dist = apply_sampling_filters(tokens, probs, min_p, temperature, top_p, top_k)
        return dist or [(banned_token, 1.0)]

    excluded = {banned_token} | {t for t, n in counts.items() if n > 0}
    ladder = [
        (min_p, temperature, top_p, top_k),
        (min_p, 1.0, top_p, top_k),
        (0.0, 1.0, top_p, top_k),
        (0.0, 1.0, 1.0, top_k),
        (0.0, 1.0, 1.0, None),
    ]
    for stage_min_p, stage_temp, stage_top_p, stage_top_k in ladder:
        dist = apply_sampling_filters(tokens, probs, stage_min_p, stage_temp, stage_top_p, stage_top_k)
        allowed = [(t, p) for t, p in dist if t not in excluded]
        if allowed:
            total = sum(p for _, p in allowed)
            return [(t, p / total) for t, p in allowed]
    return [(banned_token, 1.0)]


def draw(dist: Distribution, rng: np.random.Generator) -> Hashable:
    """Sample one token from a (token, prob) distribution."""
    if len(dist) == 1:
        # keep the RNG stream aligned whether or not the choice is trivial
        rng.random()
        return dist[0][0]
    p = np.asarray([prob for _, prob in dist], dtype=np.float64)
    return dist[int(rng.choice(len(dist), p=p / p.sum()))][0]


def draw_at(dist: Distribution, u: float, v: float, first: Optional[Hashable] = None) -> Hashable:
    """
    Draw with caller-supplied uniforms in [0, 1). `first` is picked exactly
    when u < its probability; otherwise v picks among the remaining tokens by
    inverse CDF. Shrinking the share of `first` never turns a miss into a
    hit, and the pick among the rest does not depend on that share.
    """
    if not dist:
        raise ValueError("cannot draw from an empty distribution")
    if not (0.0 <= u < 1.0 and 0.0 <= v < 1.0):
        raise ValueError(f"uniforms must be in [0, 1), got {u}, {v}")
    total = sum(prob for _, prob in dist)
    p_first = sum(prob for tok, prob in dist if tok == first) / total
    rest = [(tok, prob) for tok, prob in dist if tok != first]
    if u < p_first or not rest:
        return first
    p = np.asarray([prob for _, prob in rest], dtype=np.float64)
    idx = int(np.searchsorted(np.cumsum(p / p.sum()), v, side="right"))
    return rest[min(idx, len(rest) - 1)][0]
