import pytest

from antislop.error_handling import InvariantError
from antislop.trace import Candidate, TokenTrace

CANDS = [Candidate(" Elara", -0.5, 1), Candidate(" Mira", -1.5, 2), Candidate(" Kael", -2.0, 3)]
VERBS = [Candidate(" ran", -0.7, 4), Candidate(" sang", -0.9, 5)]


def _trace():
    trace = TokenTrace()
    trace.append(" Elara", 1, CANDS)
    trace.append(" ran", 4, VERBS)
    trace.append(".", None, [Candidate(".", -0.1), Candidate("!", -2.5)])
    return trace


def test_append_tracks_spans_and_text():
    """Test tokens, spans and decoded text stay aligned."""
    trace = _trace()
    assert trace.text == " Elara ran."
    assert trace.spans == [(0, 6), (6, 10), (10, 11)]
    assert trace.text_before(1) == " Elara"
    assert trace.text_before(99) == trace.text
    trace.check_integrity()


def test_append_rejects_token_outside_candidates():
    """Test emitted tokens must be cached candidates."""
    with pytest.raises(InvariantError):
        TokenTrace().append(" Tomas", None, CANDS)


def test_replace_keeps_position_state():
    """Test replace keeps candidates, counts and earlier triggers at the position."""
    trace = _trace()
    trace.attenuated[0][" Elara"] = 1
    trace.triggered |= {(0, 0), (2, 1)}
    trace.ignore_marks |= {(0, 5), (1, 0)}

    discarded = trace.replace(0, " Mira", 2)

    assert discarded == 3
    assert trace.text == " Mira"
    assert trace.attenuated[0] == {" Elara": 1}
    assert [c.text for c in trace.candidates[0]] == [" Elara", " Mira", " Kael"]
    assert trace.triggered == {(0, 0)}
    assert trace.ignore_marks == set()
    trace.check_integrity()


def test_replace_rejects_non_candidate_and_bad_position():
    """Test replace validation."""
    trace = _trace()
    with pytest.raises(InvariantError):
        trace.replace(0, " Tomas", None)
    with pytest.raises(InvariantError):
        trace.replace(3, " Mira", 2)


def test_truncate_drops_marks_past_the_cut():
    """Test truncation removes later marks."""
    trace = _trace()
    trace.ignore_marks |= {(0, 0), (2, 0)}
    assert trace.truncate(1) == 2
    assert trace.ignore_marks == {(0, 0)}
    assert trace.truncate(5) == 0
    trace.check_integrity()


def test_check_integrity_detects_stale_marks():
    """Test integrity check flags marks on missing positions."""
    trace = _trace()
    trace.ignore_marks.add((7, 0))
    with pytest.raises(InvariantError):
        trace.check_integrity()
