import numpy as np
import pytest

from antislop.sampling import apply_sampling_filters, attenuate, draw, draw_at, resample_distribution


def _as_dict(dist):
    return dict(dist)


def test_attenuate():
    """Test the soft-ban attenuation rule."""
    assert attenuate(0.99, 0.2) == pytest.approx(0.0099, abs=1e-12)
    assert attenuate(0.5, 0.0) == 0.5
    assert attenuate(0.5, 1.0) == pytest.approx(0.5e-10)
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            attenuate(bad, 0.5)


def test_weak_ban_is_filtered_back_to_the_banned_token():
    """Test a weak ban leaves only the banned token once min-p runs."""
    cands = [("Tapestry", 0.99), ("Mural", 0.0005)]
    assert resample_distribution(cands, "Tapestry", s=0.2, min_p=0.1) == [("Tapestry", 1.0)]


def test_weak_ban_with_loose_min_p_keeps_alternative():
    """Test the alternative survives when min-p allows it."""
    cands = [("Tapestry", 0.99), ("Mural", 0.0005)]
    dist = _as_dict(resample_distribution(cands, "Tapestry", s=0.2, min_p=0.01))
    assert dist["Mural"] == pytest.approx(0.0005 / (0.0099 + 0.0005))
    assert sum(dist.values()) == pytest.approx(1.0)


def test_hard_ban_swaps_the_mode():
    """Test s=1 pushes the banned token below min-p."""
    cands = [("Tapestry", 0.99), ("Mural", 0.0005)]
    assert resample_distribution(cands, "Tapestry", s=1.0, min_p=0.1) == [("Mural", 1.0)]


def test_banned_probability_falls_with_strength():
    """Test the banned token's share never rises as s grows."""
    cands = [("a", 0.6), ("b", 0.3), ("c", 0.1)]
    shares = []
    for s in np.linspace(0.0, 1.0, 11):
        dist = _as_dict(resample_distribution(cands, "a", s=float(s), min_p=0.0))
        shares.append(dist.get("a", 0.0))
    assert all(x >= y for x, y in zip(shares, shares[1:]))
    assert shares[0] == pytest.approx(0.6)


def test_repeated_hits_compound():
    """Test attenuation counts multiply the exponent."""
    cands = [("a", 0.5), ("b", 0.5)]
    once = _as_dict(resample_distribution(cands, "a", s=0.05, min_p=0.0, attenuated={"a": 1}))
    twice = _as_dict(resample_distribution(cands, "a", s=0.05, min_p=0.0, attenuated={"a": 2}))
    assert twice["a"] < once["a"]
    assert once["a"] / once["b"] == pytest.approx(10 ** -0.5)
    assert twice["a"] / twice["b"] == pytest.approx(10 ** -1.0)


def test_filters_top_k_top_p_min_p():
    """Test each sampling filter on a small distribution."""
    tokens, probs = ["a", "b", "c"], [0.5, 0.3, 0.2]
    top_k = _as_dict(apply_sampling_filters(tokens, probs, top_k=2))
    assert top_k == pytest.approx({"a": 0.625, "b": 0.375})
    assert [t for t, _ in apply_sampling_filters(tokens, probs, top_p=0.6)] == ["a", "b"]
    assert [t for t, _ in apply_sampling_filters(tokens, probs, top_p=0.5)] == ["a"]
    assert [t for t, _ in apply_sampling_filters(tokens, probs, min_p=0.5)] == ["a", "b"]
    assert apply_sampling_filters(tokens, [0.0, 0.0, 0.0]) == []


def test_temperature_sharpens_and_flattens():
    """Test temperature below 1 favours the mode, above 1 flattens."""
    tokens, probs = ["a", "b"], [0.7, 0.3]
    cold = _as_dict(apply_sampling_filters(tokens, probs, temperature=0.5))
    hot = _as_dict(apply_sampling_filters(tokens, probs, temperature=2.0))
    assert cold["a"] > 0.7 > hot["a"] > 0.5
    assert sum(cold.values()) == pytest.approx(1.0)


def test_force_backtrack_escalates_past_min_p():
    """Test the force ladder relaxes filters until an alternative survives."""
    cands = [("x", 0.9), ("y", 0.1)]
    assert resample_distribution(cands, "x", s=0.0, min_p=0.5) == [("x", 1.0)]
    assert resample_distribution(cands, "x", s=0.0, min_p=0.5, force_backtrack=True) == [("y", pytest.approx(1.0))]


def test_force_backtrack_excludes_earlier_rejections():
    """Test tokens already rejected at a position stay excluded."""
    cands = [("x", 0.5), ("y", 0.3), ("z", 0.2)]
    dist = resample_distribution(
        cands, "x", s=0.0, min_p=0.0, force_backtrack=True, attenuated={"x": 1, "y": 1}
    )
    assert dist == [("z", pytest.approx(1.0))]
    exhausted = resample_distribution(
        cands, "x", s=0.0, min_p=0.0, force_backtrack=True, attenuated={"x": 1, "y": 1, "z": 1}
    )
    assert exhausted == [("x", 1.0)]


def test_resample_rejects_bad_input():
    """Test input validation."""
    with pytest.raises(ValueError):
        resample_distribution([], "x", s=1.0, min_p=0.0)
    with pytest.raises(ValueError):
        resample_distribution([("a", 1.0)], "x", s=1.0, min_p=0.0)
    with pytest.raises(ValueError):
        resample_distribution([("x", 0.0), ("a", 1.0)], "x", s=1.0, min_p=0.0)


def test_draw_consumes_rng_even_when_trivial():
    """Test a singleton draw advances the stream like any other draw."""
    rng = np.random.default_rng(3)
    assert draw([("only", 1.0)], rng) == "only"
    expected = np.random.default_rng(3)
    expected.random()
    assert rng.random() == expected.random()


def test_draw_follows_probabilities():
    """Test draws land on the heavy token most of the time."""
    rng = np.random.default_rng(0)
    picks = [draw([("a", 0.9), ("b", 0.1)], rng) for _ in range(2000)]
    assert 0.85 < picks.count("a") / len(picks) < 0.95


def test_draw_at_hits_first_token_below_its_share():
    """Test the leading token is picked exactly when u falls under its probability."""
    dist = [("a", 0.5), ("x", 0.3), ("b", 0.2)]
    assert draw_at(dist, 0.29, 0.9, first="x") == "x"
    assert draw_at(dist, 0.31, 0.0, first="x") == "a"
    assert draw_at(dist, 0.31, 0.99, first="x") == "b"


def test_draw_at_is_monotone_in_the_banned_share():
    """Test a weaker share for the banned token never turns a substitute into a let-through."""
    rng = np.random.default_rng(7)
    for u, v in rng.random((200, 2)):
        picks = []
        for s in (0.0, 0.05, 0.1, 0.2, 0.5):
            dist = resample_distribution([("x", 0.6), ("a", 0.25), ("b", 0.15)], "x", s=s, min_p=0.0)
            picks.append(draw_at(dist, float(u), float(v), first="x"))
        hits = [p == "x" for p in picks]
        assert hits == sorted(hits, reverse=True)
        assert len({p for p in picks if p != "x"}) <= 1


def test_draw_at_rejects_bad_input():
    """Test empty distributions and out-of-range uniforms are refused."""
    with pytest.raises(ValueError):
        draw_at([], 0.1, 0.1)
    with pytest.raises(ValueError):
        draw_at([("a", 1.0)], 1.0, 0.1)
