import pytest

from antislop.backends import MockBackend
from antislop.error_handling import DatasetError
from antislop.ftpo_data import (
    capture_dataset,
    capture_sample,
    group_sizes,
    prompts_by_generation,
    read_dataset,
    regularize_dataset,
    write_dataset,
)
from antislop.models import BacktrackEvent, FtpoSample, GenerationRecord, SampleSource, TokenRef
from antislop.patterns import compile_banlist
from antislop.sampler import generate


def _event(rejected=" Elara", chosen=(" Mira", " Kael", " Tomas"), let_through=False, position=3, gid="g0"):
    chosen = list(chosen)
    return BacktrackEvent(
        generation_id=gid,
        position=position,
        pattern_id=0,
        pattern="elara",
        kind="phrase",
        rejected_text=rejected,
        rejected_token_id=1,
        chosen_texts=chosen,
        chosen_token_ids=list(range(10, 10 + len(chosen))),
        resampled_text=rejected if let_through else chosen[0],
        let_through=let_through,
        context_text=" Night fell.",
    )


def _sample(rejected, chosen, i=0):
    return FtpoSample(
        prompt_text=f"p{i}",
        rejected=TokenRef(text=rejected),
        chosen=[TokenRef(text=c) for c in chosen],
        source=SampleSource(pattern=rejected.strip(), generation_id=str(i), position=0),
    )


def test_capture_sample():
    """Test a substitution event becomes one preference sample."""
    banlist = compile_banlist(phrases=["elara", "kael"])
    sample = capture_sample(_event(), "Write.", banlist, min_chosen_tokens=2)
    assert sample.prompt_text == "Write. Night fell."
    assert sample.rejected == TokenRef(text=" Elara", id=1)
    assert [c.text for c in sample.chosen] == [" Mira", " Tomas"]
    assert sample.source.position == 3


def test_capture_skips_let_through_and_thin_chosen_sets():
    """Test let-through events and small chosen sets give no sample."""
    banlist = compile_banlist(phrases=["elara"])
    assert capture_sample(_event(let_through=True, chosen=()), "", banlist, min_chosen_tokens=1) is None
    assert capture_sample(_event(), "", banlist, min_chosen_tokens=4) is None


def test_capture_dataset_from_generation(slop_backend, elara_banlist, hard_ban):
    """Test samples captured from real sampler events line up with their prompts."""
    result = generate(slop_backend, "Story.", elara_banlist, hard_ban, 4, "gen")
    record = GenerationRecord(prompt_id="p", generation_id="gen", prompt="Story.", text=result.text)
    samples = capture_dataset(result.events + [_event(gid="unknown")], prompts_by_generation([record]), elara_banlist, 2)
    substitutions = [ev for ev in result.events if not ev.let_through]
    assert len(samples) == len(substitutions)
    for sample, ev in zip(samples, substitutions):
        assert sample.prompt_text == "Story." + ev.context_text
        assert sample.rejected.text == " Elara"
        assert all(c.text != " Elara" for c in sample.chosen)


def test_capture_uses_trace_prefix(slop_backend, elara_banlist, hard_ban):
    """Test the prefix can be taken from the trace instead of the event."""
    result = generate(slop_backend, "Story.", elara_banlist, hard_ban, 4, "gen")
    ev = next(e for e in result.events if not e.let_through and e.position < len(result.trace))
    sample = capture_sample(ev, "Story.", elara_banlist, trace=result.trace, min_chosen_tokens=1)
    assert sample.prompt_text == "Story." + result.trace.text_before(ev.position)


def test_regularize_strength_zero_keeps_everything():
    """Test strength 0 is the identity."""
    samples = [_sample(" Elara", [" Mira"], i) for i in range(20)] + [_sample(" tapestry", [" loom"], 99)]
    assert regularize_dataset(samples, 0.0, 0.0, seed=1) == samples


def test_regularize_rejected_flattens_groups():
    """Test strength 1 pulls a dominant group towards the smallest one."""
    samples = [_sample(" Elara", [" Mira", " Kael"], i) for i in range(200)]
    samples += [_sample(" tapestry", [" Mira", " Kael"], 1000 + i) for i in range(10)]
    kept = regularize_dataset(samples, rejected_strength=1.0, chosen_strength=0.0, seed=3)
    sizes = group_sizes(kept)
    assert sizes["tapestry"] == 10
    assert 2 <= sizes["elara"] <= 25
    assert [s.prompt_text for s in kept] == [s.prompt_text for s in samples if s in kept]


def test_regularize_chosen_thins_common_chosen_sets():
    """Test samples whose chosen tokens are the most frequent are dropped first."""
    common = [_sample(" Elara", [" Mira"], i) for i in range(50)]
    rare = [_sample(" Elara", [" Zed"], 100)]
    kept = regularize_dataset(common + rare, rejected_strength=0.0, chosen_strength=1.0, seed=0)
    assert rare[0] in kept
    assert len([s for s in kept if s.chosen[0].text == " Mira"]) < 50


def test_regularize_is_deterministic_and_validated():
    """Test seeding and strength bounds."""
    samples = [_sample(" Elara", [" Mira"], i) for i in range(30)] + [_sample(" loom", [" Kael"], 77)]
    assert regularize_dataset(samples, 1.0, 0.5, 9) == regularize_dataset(samples, 1.0, 0.5, 9)
    assert regularize_dataset([], 1.0, 1.0, 0) == []
    with pytest.raises(ValueError):
        regularize_dataset(samples, 1.5, 0.0, 0)


def test_dataset_roundtrip_and_errors(tmp_path):
    """Test JSONL persistence and line-numbered errors."""
    samples = [_sample(" Elara", [" Mira", " Kael"], i) for i in range(3)]
    path = tmp_path / "dataset.jsonl"
    assert write_dataset(samples, path) == 3
    assert read_dataset(path) == samples

    bad = tmp_path / "bad.jsonl"
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace('"chosen": [', '"chosen": [{"text": " Elara", "id": null}, ')
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError) as excinfo:
        read_dataset(bad)
    assert excinfo.value.line_number == 2
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "missing.jsonl")


def test_regularize_keeps_a_subset_that_shrinks_with_strength():
    """Test output is drawn from the input and raising rejected_strength never grows a group."""
    samples = [_sample(" Elara", [" Mira", " Kael"], i) for i in range(120)]
    samples += [_sample(" tapestry", [" loom", " Kael"], 200 + i) for i in range(30)]
    samples += [_sample(" whisper", [" Mira"], 400 + i) for i in range(5)]
    previous = None
    for strength in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0):
        kept = regularize_dataset(samples, rejected_strength=strength, chosen_strength=0.2, seed=11)
        assert all(s in samples for s in kept)
        sizes = group_sizes(kept)
        if previous is not None:
            kept_ids = {s.prompt_text for s in kept}
            assert kept_ids <= previous[0]
            assert all(sizes.get(group, 0) <= n for group, n in previous[1].items())
        previous = ({s.prompt_text for s in kept}, sizes)
    assert max(previous[1].values()) < 120
