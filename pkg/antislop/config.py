"""
Run configuration - one YAML document, validated by pydantic.

Keys belonging to stages this toolkit does not run (vLLM management, model
training, refusal detection, HF dataset loading) are accepted and dropped
with a warning so existing configs keep loading; any other unknown key is
rejected.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from antislop.error_handling import ConfigError
from antislop.models import BanlistDocument, SamplerConfig

logger = logging.getLogger(__name__)

IGNORED_KEY_PREFIXES = ("vllm_", "finetune_")
IGNORED_KEYS = {
    "manage_vllm",
    "generation_step_enabled",
    "generation_hf_dataset_name",
    "generation_hf_dataset_split",
    "generation_chat_template_model_id",
    "generation_logging_level",
    "generation_refusal_detection",
    "enable_slop_phrase_ban",
    "top_n_initial_slop_ban",
    "top_n_subsequent_slop_ban",
}
# finetune_* keys that still mean something here
KEPT_FINETUNE_KEYS = {"finetune_mode", "finetune_ftpo_dataset", "finetune_early_stopping_wins"}

QUOTA_KINDS = (
    ("dict_words", "dict_overrep"),
    ("nodict_words", "nodict_overrep"),
    ("dict_bigrams", "dict_bigrams"),
    ("nodict_bigrams", "nodict_bigrams"),
    ("dict_trigrams", "dict_trigrams"),
    ("nodict_trigrams", "nodict_trigrams"),
)


class AntislopConfig(BaseModel):
    """Every in-scope knob of a profile -> generate -> ftpo -> eval run."""
    model_config = ConfigDict(extra="forbid", validate_default=True)

    # --- run setup ---
    experiment_base_dir: str = "results/auto_antislop_runs"
    human_profile_path: Optional[str] = Field(default=None, description="Word baseline TSV (pattern, per-million)")
    human_ngram_profile_path: Optional[str] = Field(default=None, description="Bigram/trigram baseline TSV")
    log_level: str = "INFO"
    num_iterations: int = Field(default=2, ge=2)
    model_id: Optional[str] = None
    seed: int = 0

    # --- backend ---
    generation_api_base_url: Optional[str] = None
    generation_model_id: Optional[str] = None
    generation_api_key: Optional[str] = None
    generation_mock_spec_path: Optional[str] = None
    generation_retry_initial_delay: float = Field(default=1.0, ge=0.0)
    generation_circuit_breaker_failures: int = Field(default=5, ge=1)

    # --- generation ---
    generation_max_new_tokens: int = Field(default=1000, ge=1)
    generation_threads: int = Field(default=50, ge=1)
    generation_max_prompts: int = Field(default=2000, ge=0)
    generation_param_chunk_size: int = Field(default=20, ge=1)
    generation_param_top_logprobs_count: int = Field(default=20, ge=2)
    generation_param_temperature: float = Field(default=1.0, gt=0.0)
    generation_param_top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    generation_param_top_k: Optional[int] = Field(default=50, ge=1)
    generation_param_min_p: float = Field(default=0.01, ge=0.0, le=1.0)
    generation_param_timeout: float = Field(default=480.0, gt=0)
    generation_param_stop_sequences: list[str] = Field(default_factory=list)
    generation_prompt_template: str = "Writing prompt: {prompt}\n\nWrite 1000 words to this prompt. Your response:\n"
    generation_system_prompt: str = ""
    generation_force_backtrack: bool = False
    generation_ban_strength: float = Field(default=1.0, ge=0.0, le=1.0)
    generation_ngram_remove_stopwords: bool = True
    generation_ngram_language: Literal["english"] = "english"
    generation_prompts_dir: str = "prompts"
    generation_prompt_set: str = "writing"
    generation_prompt_version: str = "current"

    # --- n-gram analysis & banning ---
    enable_ngram_ban: bool = True
    min_word_len_for_analysis: int = Field(default=3, ge=1)
    top_k_bigrams: int = Field(default=5000, ge=0)
    top_k_trigrams: int = Field(default=5000, ge=0)
    dict_bigrams_initial: int = Field(default=300, ge=0)
    dict_bigrams_subsequent: int = Field(default=0, ge=0)
    nodict_bigrams_initial: int = Field(default=200, ge=0)
    nodict_bigrams_subsequent: int = Field(default=0, ge=0)
    dict_trigrams_initial: int = Field(default=300, ge=0)
    dict_trigrams_subsequent: int = Field(default=0, ge=0)
    nodict_trigrams_initial: int = Field(default=200, ge=0)
    nodict_trigrams_subsequent: int = Field(default=0, ge=0)
    extra_ngrams_to_ban: list[str] = Field(default_factory=list)

    # --- over-represented words ---
    compute_overrep_words: bool = True
    top_k_words_for_overrep_analysis: int = Field(default=200000, ge=0)
    dict_overrep_initial: int = Field(default=920, ge=0)
    dict_overrep_subsequent: int = Field(default=0, ge=0)
    nodict_overrep_initial: int = Field(default=80, ge=0)
    nodict_overrep_subsequent: int = Field(default=0, ge=0)

    # --- phrases, regexes, whitelist ---
    min_phrase_freq_to_keep: int = Field(default=2, ge=1)
    extra_slop_phrases_to_ban: list[str] = Field(default_factory=list)
    whitelist_strings: list[str] = Field(default_factory=list)
    extra_regex_patterns: list[str] = Field(default_factory=list)
    banlist_path: Optional[str] = Field(default=None, description="Existing banlist JSON merged into user bans")

    # --- profiling / fingerprint ---
    profile_corpus_path: Optional[str] = None
    profile_corpus_paths: list[str] = Field(default_factory=list)
    fingerprint_words: int = Field(default=120, ge=0)
    fingerprint_bigrams: int = Field(default=40, ge=0)
    fingerprint_trigrams: int = Field(default=40, ge=0)
    fingerprint_min_prompts: int = Field(default=3, ge=1)

    # --- FTPO ---
    finetune_mode: Literal["ftpo"] = "ftpo"
    finetune_ftpo_dataset: str = ""
    finetune_early_stopping_wins: float = Field(default=0.85, ge=0.0)
    ftpo_sample_rejected_regularisation_strength: float = Field(default=0.8, ge=0.0, le=1.0)
    ftpo_sample_chosen_regularisation_strength: float = Field(default=0.2, ge=0.0, le=1.0)
    ftpo_sample_min_chosen_tokens: int = Field(default=4, ge=1)
    ftpo_lambda_mse_target: float = Field(default=0.05, ge=0.0)
    ftpo_tau_mse_target: float = Field(default=0.5, ge=0.0)
    ftpo_lambda_mse: float = Field(default=0.4, ge=0.0)
    ftpo_clip_epsilon_logits: float = Field(default=2.0, gt=0.0)
    ftpo_detach_taper_weight: bool = False
    ftpo_min_dataset_size: int = Field(default=1, ge=0)
    ftpo_reference_spec_path: Optional[str] = None
    ftpo_policy_spec_path: Optional[str] = None
    ftpo_events_path: Optional[str] = None
    ftpo_corpus_path: Optional[str] = None

    # --- evaluation ---
    eval_baseline_corpus_path: Optional[str] = None
    eval_treated_corpus_path: Optional[str] = None
    eval_mattr_window: int = Field(default=500, ge=1)
    eval_hdd_sample_size: int = Field(default=42, ge=1)

    @field_validator("log_level")
    @classmethod
    def _check_level(cls, value: str) -> str:
        level = value.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {value!r}")
        return level

    @field_validator("generation_prompt_template")
    @classmethod
    def _check_template(cls, value: str) -> str:
        if "{prompt}" not in value:
            raise ValueError("generation_prompt_template must contain {prompt}")
        return value

    @field_validator("extra_ngrams_to_ban")
    @classmethod
    def _check_ngram_strings(cls, value: list[str]) -> list[str]:
        for entry in value:
            if not 2 <= len(entry.split()) <= 3:
                raise ValueError(f"n-gram ban {entry!r} must have 2 or 3 words")
        return value

    @model_validator(mode="after")
    def _check_backend(self):
        if self.generation_mock_spec_path and self.generation_api_base_url:
            raise ValueError("set only one of generation_mock_spec_path and generation_api_base_url")
        return self

    # --- derived views ---

    def sampler_config(self, ban_strength: Optional[float] = None) -> SamplerConfig:
        return SamplerConfig(
            ban_strength=self.generation_ban_strength if ban_strength is None else ban_strength,
            min_p=self.generation_param_min_p,
            temperature=self.generation_param_temperature,
            top_p=self.generation_param_top_p,
            top_k=self.generation_param_top_k,
            chunk_size=self.generation_param_chunk_size,
            top_logprobs_count=self.generation_param_top_logprobs_count,
            force_backtrack=self.generation_force_backtrack,
            max_new_tokens=self.generation_max_new_tokens,
            stop_sequences=list(self.generation_param_stop_sequences),
        )

    def quotas(self, initial: bool = True) -> dict[str, int]:
        """Per-class/kind ban quotas for the first or a later iteration."""
        suffix = "initial" if initial else "subsequent"
        quotas = {name: getattr(self, f"{key}_{suffix}") for name, key in QUOTA_KINDS}
        if not self.compute_overrep_words:
            quotas["dict_words"] = quotas["nodict_words"] = 0
        if not self.enable_ngram_ban:
            for name in ("dict_bigrams", "nodict_bigrams", "dict_trigrams", "nodict_trigrams"):
                quotas[name] = 0
        return quotas

    def candidate_caps(self) -> dict[str, int]:
        """Ranked-pool caps applied before quotas."""
        return {
            "word": self.top_k_words_for_overrep_analysis,
            "bigram": self.top_k_bigrams,
            "trigram": self.top_k_trigrams,
        }

    def user_banlist(self) -> BanlistDocument:
        """User-supplied bans, merged with banlist_path when set."""
        doc = BanlistDocument(
            slop_phrases=list(self.extra_slop_phrases_to_ban),
            ngrams=[s.split() for s in self.extra_ngrams_to_ban],
            regex_patterns=list(self.extra_regex_patterns),
            whitelist=list(self.whitelist_strings),
        )
        if self.banlist_path:
            path = require_path(self.banlist_path, "banlist_path")
            try:
                existing = BanlistDocument.model_validate_json(path.read_text(encoding="utf-8"))
            except ValidationError as e:
                raise ConfigError(f"banlist_path {path}: {e}") from e
            doc = existing.merge(doc)
        return doc

    def resolved_api_key(self) -> Optional[str]:
        return self.generation_api_key or os.getenv("OPENAI_API_KEY")

    def resolved_model_id(self) -> Optional[str]:
        return self.generation_model_id or self.model_id


def require_path(value: Optional[str], key: str) -> Path:
    """Resolve a config path that must exist, naming the key when it does not."""
    if not value:
        raise ConfigError(f"config key `{key}` is required for this stage")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"`{key}` points to a missing path: {path}")
    return path


def _is_ignored(key: str) -> bool:
    if key in KEPT_FINETUNE_KEYS:
        return False
    return key in IGNORED_KEYS or key.startswith(IGNORED_KEY_PREFIXES)


def parse_config(raw: dict[str, Any], overrides: Optional[dict[str, Any]] = None) -> AntislopConfig:
    """Validate an already-loaded mapping."""
    data = {}
    for key, value in raw.items():
        if _is_ignored(key):
            logger.warning(f"Ignoring out-of-scope config key: {key}")
            continue
        if key not in AntislopConfig.model_fields:
            raise ConfigError(f"Unknown config key: {key}")
        data[key] = value
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        return AntislopConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid config: {problems}") from e


def load_config(path: Union[str, Path], overrides: Optional[dict[str, Any]] = None) -> AntislopConfig:
    """
    Load and validate a YAML run config.

    Args:
        path: YAML file
        overrides: Values that win over the file (e.g. --seed from the CLI)

    Raises:
        ConfigError: missing file, YAML syntax error, unknown key or invalid value
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping of config keys")
    return parse_config(raw, overrides)


def dump_config(config: AntislopConfig, path: Optional[Union[str, Path]] = None) -> str:
    """Serialize to YAML; writes to path when given."""
    text = yaml.safe_dump(config.model_dump(), sort_keys=False, allow_unicode=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def config_hash(config: AntislopConfig) -> str:
    """
    Stable digest of the semantic config (secrets excluded). The model is
    re-validated first so numerals hash in their field's type (480 and 480.0
    are the same timeout).
    """
    canonical_model = type(config).model_validate(config.model_dump())
    payload = json.loads(canonical_model.model_dump_json(exclude={"generation_api_key"}))
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
