"""Shared fixtures: mock model specs, banlists, corpora and configs."""

import logging
from pathlib import Path

import pytest

from antislop.backends import MockBackend, MockModelSpec
from antislop.config import parse_config
from antislop.models import SamplerConfig
from antislop.patterns import compile_banlist

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers configure_logging installed so they never outlive a test's captured stream."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_antislop", False):
            root.removeHandler(handler)
    root.setLevel(logging.WARNING)


def _spec(contexts, default, vocabulary=None, eos_token=None) -> MockModelSpec:
    vocab = set(default)
    for dist in contexts.values():
        vocab.update(dist)
    return MockModelSpec(
        vocabulary=vocabulary or sorted(vocab),
        contexts=contexts,
        default=default,
        eos_token=eos_token,
    )


@pytest.fixture
def make_spec():
    """Factory: make_spec(contexts, default, vocabulary=None, eos_token=None)."""
    return _spec


@pytest.fixture
def slop_spec() -> MockModelSpec:
    """Sentence starts prefer " Elara"; four other names are always available."""
    names = {" Elara": 0.6, " Mira": 0.15, " Kael": 0.1, " Tomas": 0.1, " Ines": 0.05}
    verbs = {" ran": 0.5, " sang": 0.3, " slept": 0.2}
    return _spec(
        contexts={
            ".": names,
            " Elara": verbs,
            " Mira": verbs,
            " Kael": verbs,
            " Tomas": verbs,
            " Ines": verbs,
            " ran": {".": 0.9, " far": 0.1},
            " sang": {".": 0.9, " far": 0.1},
            " slept": {".": 0.9, " far": 0.1},
            " far": {".": 0.95, " ran": 0.05},
        },
        default=names,
    )


@pytest.fixture
def slop_backend(slop_spec) -> MockBackend:
    return MockBackend(slop_spec)


@pytest.fixture
def elara_banlist():
    return compile_banlist(phrases=["elara"])


@pytest.fixture
def hard_ban() -> SamplerConfig:
    return SamplerConfig(
        ban_strength=1.0, min_p=0.01, top_k=None, chunk_size=8, force_backtrack=True, max_new_tokens=60
    )


@pytest.fixture
def repo_root() -> Path:
    return REPO_ROOT


@pytest.fixture
def pipeline_config(tmp_path):
    """Desk-scale run over the bundled mock model, prompts and baselines."""
    def build(**overrides):
        raw = {
            "experiment_base_dir": str(tmp_path / "runs"),
            "human_profile_path": str(REPO_ROOT / "data" / "human_word_profile.tsv"),
            "human_ngram_profile_path": str(REPO_ROOT / "data" / "human_ngram_profile.tsv"),
            "num_iterations": 2,
            "seed": 7,
            "generation_mock_spec_path": str(REPO_ROOT / "configs" / "mock_model.yaml"),
            "generation_prompts_dir": str(REPO_ROOT / "prompts"),
            "generation_max_new_tokens": 80,
            "generation_threads": 3,
            "generation_param_chunk_size": 10,
            "dict_overrep_initial": 3,
            "nodict_overrep_initial": 2,
            "dict_bigrams_initial": 2,
            "nodict_bigrams_initial": 2,
            "dict_trigrams_initial": 1,
            "nodict_trigrams_initial": 1,
            "nodict_overrep_subsequent": 1,
            "whitelist_strings": ["the", "she", "was", "it"],
            "extra_regex_patterns": [
                r"\b(?:wasn['’]t|weren['’]t|isn['’]t|aren['’]t|ain['’]t|not)\s+(?:just|only|merely)?\s*"
                r"(?:(?!\bbut\b|[.?!…]).){1,80}?[,;:\-–—]\s*but\s+(?!I\b)(?:also\s+)?"
            ],
            "ftpo_sample_min_chosen_tokens": 2,
            "ftpo_reference_spec_path": str(REPO_ROOT / "configs" / "mock_model.yaml"),
            "ftpo_policy_spec_path": str(REPO_ROOT / "configs" / "mock_policy.yaml"),
        }
        raw.update(overrides)
        return parse_config(raw)
    return build
