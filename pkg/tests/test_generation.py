import json
import logging
from types import SimpleNamespace

import pytest

from antislop.backends import MockBackend
from antislop.error_handling import BackendConfigError, ConfigError, TransientBackendError
from antislop.generation import build_backend, load_prompts, run_generations
from antislop.logging_config import JSONFormatter, StructuredLogger, configure_logging
from antislop.models import GenerationStats, SamplerConfig
from antislop.patterns import compile_banlist
from antislop.prompt_manager import WritingPrompt
from antislop.stats_tracker import StatsTracker

TEMPLATE = "Prompt: {prompt}\n"
PROMPTS = [WritingPrompt(id=f"p{i}", text=f"Story {i}.") for i in range(6)]


def test_runs_are_ordered_and_thread_independent(slop_backend, elara_banlist, hard_ban):
    """Test records come back in prompt order with identical output for any thread count."""
    one = run_generations(slop_backend, PROMPTS, elara_banlist, hard_ban, 3, TEMPLATE, threads=1, id_prefix="0-")
    many = run_generations(slop_backend, PROMPTS, elara_banlist, hard_ban, 3, TEMPLATE, threads=4, id_prefix="0-")
    assert [r.prompt_id for r in many.records] == [p.id for p in PROMPTS]
    assert [r.generation_id for r in many.records][0] == "0-p0"
    assert [r.text for r in one.records] == [r.text for r in many.records]
    assert one.events == many.events
    assert many.complete
    assert many.tracker.summary()["generations"] == 6
    assert many.records[0].prompt == "Prompt: Story 0.\n"


def test_empty_prompt_list(slop_backend, elara_banlist, hard_ban):
    """Test no prompts means no work."""
    run = run_generations(slop_backend, [], elara_banlist, hard_ban, 0, TEMPLATE)
    assert run.records == [] and run.complete


def test_per_generation_stats_add_up_to_the_totals(slop_backend, elara_banlist, hard_ban):
    """Test each finished generation keeps its own stats record, in prompt order."""
    run = run_generations(slop_backend, PROMPTS, elara_banlist, hard_ban, 3, TEMPLATE, threads=3, id_prefix="0-")
    assert [s["generation_id"] for s in run.per_generation] == [r.generation_id for r in run.records]
    assert [s["prompt_id"] for s in run.per_generation] == [p.id for p in PROMPTS]
    totals = run.tracker.totals
    for key in ("tokens_kept", "tokens_generated", "tokens_discarded", "backtracks", "lets_through"):
        assert sum(s[key] for s in run.per_generation) == getattr(totals, key)


class _FailsOnPrompt:
    name = "partial"

    def __init__(self, inner, bad_marker):
        self.inner = inner
        self.bad_marker = bad_marker

    def next_chunk(self, req):
        if self.bad_marker in req.prompt_text:
            raise TransientBackendError("endpoint down", attempts=5)
        return self.inner.next_chunk(req)


def test_backend_failure_keeps_ordered_prefix(slop_backend, elara_banlist, hard_ban):
    """Test a failed generation stops the run and keeps everything before it."""
    backend = _FailsOnPrompt(slop_backend, "Story 3.")
    run = run_generations(backend, PROMPTS, elara_banlist, hard_ban, 3, TEMPLATE, threads=2)
    assert not run.complete
    assert [r.prompt_id for r in run.records] == ["p0", "p1", "p2"]
    assert run.tracker.summary()["failures"] == 1


def test_load_prompts_caps_count(pipeline_config):
    """Test generation_max_prompts."""
    assert len(load_prompts(pipeline_config(generation_max_prompts=2))) == 2
    assert len(load_prompts(pipeline_config())) == 5


def test_build_backend(pipeline_config, mocker):
    """Test backend selection and the up-front endpoint probe."""
    assert isinstance(build_backend(pipeline_config()), MockBackend)
    with pytest.raises(ConfigError):
        build_backend(pipeline_config(generation_mock_spec_path=None))
    with pytest.raises(ConfigError):
        build_backend(pipeline_config(generation_mock_spec_path=None, generation_api_base_url="http://x/v1"))

    client = mocker.Mock()
    client.completions.create.return_value = SimpleNamespace(
        choices=[SimpleNamespace(logprobs=None, finish_reason="length")]
    )
    mocker.patch("antislop.http_backend.OpenAI", return_value=client)
    config = pipeline_config(
        generation_mock_spec_path=None, generation_api_base_url="http://x/v1", generation_model_id="m"
    )
    with pytest.raises(BackendConfigError):
        build_backend(config)


def test_stats_tracker_totals():
    """Test run totals across generations."""
    tracker = StatsTracker()
    tracker.track_generation(GenerationStats(tokens_kept=10, tokens_generated=15, tokens_discarded=5, backtracks=2, elapsed_ms=500))
    tracker.track_generation(GenerationStats(tokens_kept=10, tokens_generated=10, elapsed_ms=500))
    tracker.track_failure()
    summary = tracker.summary()
    assert summary["generations"] == 2
    assert summary["failures"] == 1
    assert summary["tokens_discarded"] == 5
    assert summary["kept_ratio"] == pytest.approx(0.8)
    assert summary["kept_tokens_per_sec"] == pytest.approx(20.0)
    assert tracker.totals.backtracks == 2


def test_structured_logs_are_json(slop_backend, elara_banlist, hard_ban, capsys):
    """Test generation summaries come out as JSON lines."""
    configure_logging("DEBUG")
    run_generations(
        slop_backend, PROMPTS[:1], elara_banlist, hard_ban, 1, TEMPLATE,
        structured_logger=StructuredLogger("antislop.test"),
    )
    lines = [json.loads(line) for line in capsys.readouterr().err.splitlines() if line.strip()]
    kinds = {line.get("event_type") for line in lines}
    assert {"backtrack", "generation"} <= kinds
    summary = next(line for line in lines if line.get("event_type") == "generation")
    assert summary["generation_id"] == "p0"
    assert "kept_ratio" in summary


def test_json_formatter_plain_records():
    """Test ordinary log records are formatted as JSON too."""
    record = logging.LogRecord("antislop.x", logging.INFO, __file__, 1, "hello %s", ("world",), None)
    payload = json.loads(JSONFormatter().format(record))
    assert payload["message"] == "hello world"
    assert payload["level"] == "INFO"
