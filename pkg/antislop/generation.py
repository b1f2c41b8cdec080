"""
Multi-prompt generation runner.

Fans prompts out over a thread pool, one backtracking generation per
prompt. Results come back in prompt order regardless of scheduling; each
generation's RNG depends only on (seed, generation_id).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from antislop.backends import MockBackend, ModelBackend
from antislop.config import AntislopConfig
from antislop.error_handling import BackendError, ConfigError
from antislop.http_backend import EndpointConfig, HttpBackend
from antislop.logging_config import StructuredLogger
from antislop.models import BacktrackEvent, GenerationRecord, SamplerConfig
from antislop.patterns import Banlist
from antislop.prompt_manager import PromptManager, WritingPrompt, compile_prompt
from antislop.sampler import generate
from antislop.stats_tracker import StatsTracker

logger = logging.getLogger(__name__)


@dataclass
class GenerationRun:
    records: list[GenerationRecord] = field(default_factory=list)
    events: list[BacktrackEvent] = field(default_factory=list)
    tracker: StatsTracker = field(default_factory=StatsTracker)
    per_generation: list[dict] = field(default_factory=list)
    error: Optional[BackendError] = None

    @property
    def complete(self) -> bool:
        return self.error is None


def build_backend(config: AntislopConfig) -> ModelBackend:
    """
    Mock backend when generation_mock_spec_path is set, otherwise the
    completions endpoint. The backend is probed before it is returned.

    Raises:
        ConfigError: neither backend configured
        BackendConfigError: endpoint cannot return logprobs
    """
    if config.generation_mock_spec_path:
        backend = MockBackend.from_path(config.generation_mock_spec_path)
    elif config.generation_api_base_url:
        model = config.resolved_model_id()
        if not model:
            raise ConfigError("generation_model_id (or model_id) is required with generation_api_base_url")
        backend = HttpBackend(EndpointConfig(
            base_url=config.generation_api_base_url,
            api_key=config.resolved_api_key(),
            model=model,
            timeout=config.generation_param_timeout,
            initial_delay=config.generation_retry_initial_delay,
            max_in_flight=config.generation_threads,
            breaker_failures=config.generation_circuit_breaker_failures,
        ))
    else:
        raise ConfigError("set generation_mock_spec_path or generation_api_base_url")
    backend.probe()
    logger.info(f"Using {backend.name} backend")
    return backend


def load_prompts(config: AntislopConfig) -> list[WritingPrompt]:
    """The configured prompt set, capped at generation_max_prompts."""
    manager = PromptManager(config.generation_prompts_dir)
    prompt_set = manager.load_prompt_set(config.generation_prompt_set, config.generation_prompt_version)
    prompts = prompt_set.prompts[:config.generation_max_prompts]
    logger.info(f"Loaded {len(prompts)} prompts from {prompt_set.file_path} (version {prompt_set.version})")
    return prompts


def run_generations(
    backend: ModelBackend,
    prompts: list[WritingPrompt],
    banlist: Banlist,
    sampler_config: SamplerConfig,
    seed: int,
    template: str,
    system_prompt: str = "",
    threads: int = 1,
    id_prefix: str = "",
    structured_logger: Optional[StructuredLogger] = None,
) -> GenerationRun:
    """
    Generate one output per prompt.

    A backend failure stops the run: generations already finished are
    kept (the partial result), pending ones are cancelled and the error is
    stored on the returned run for the caller to raise after flushing.
    """
    run = GenerationRun()
    if not prompts:
        return run

    def work(prompt: WritingPrompt):
        generation_id = f"{id_prefix}{prompt.id}"
        text = compile_prompt(template, prompt.text, system_prompt)
        result = generate(backend, text, banlist, sampler_config, seed, generation_id, structured_logger)
        return GenerationRecord(
            prompt_id=prompt.id, generation_id=generation_id, prompt=text, text=result.text,
        ), result

    pool = ThreadPoolExecutor(max_workers=threads)
    futures = [pool.submit(work, p) for p in prompts]
    try:
        for prompt, future in zip(prompts, futures):
            try:
                record, result = future.result()
            except BackendError as e:
                logger.error(f"Generation for prompt {prompt.id} failed: {e}")
                run.error = e
                run.tracker.track_failure()
                break
            run.records.append(record)
            run.events.extend(result.events)
            run.tracker.track_generation(result.stats)
            run.per_generation.append(
                {"generation_id": record.generation_id, "prompt_id": record.prompt_id, **result.stats.summary()}
            )
    finally:
        pool.shutdown(wait=True, cancel_futures=True)

    if run.error is not None:
        logger.warning(f"Backend failure: keeping {len(run.records)} of {len(prompts)} generations")
    return run
