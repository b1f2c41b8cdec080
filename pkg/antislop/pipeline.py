"""
Pipeline stages and the end-to-end graph.

Each stage reads its inputs, writes its outputs into a directory and
returns what the next stage needs. The `pipeline` command wires them into a
LangGraph state machine:

    generate -> profile -> (next iteration: generate | done: ftpo) -> eval
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, TypedDict

from langgraph.graph import END, START, StateGraph

from antislop.backends import ModelBackend, load_mock_spec
from antislop.config import AntislopConfig, require_path
from antislop.corpus import read_corpus, read_jsonl, write_jsonl
from antislop.error_handling import ConfigError
from antislop.ftpo_data import (
    capture_dataset,
    prompts_by_generation,
    read_dataset,
    regularize_dataset,
    write_dataset,
)
from antislop.ftpo_math import FtpoBatchReport, FtpoLossParams, MockLogitProvider, batch_eval
from antislop.generation import GenerationRun, build_backend, load_prompts, run_generations
from antislop.logging_config import StructuredLogger
from antislop.metrics import EvalReport, document_rows, evaluate, write_rows
from antislop.models import BacktrackEvent, BanlistDocument, CorpusDocument, FtpoSample, GenerationRecord
from antislop.patterns import Banlist, banlist_from_document, write_banlist_document
from antislop.profiler import (
    FrequencyTable,
    SlopProfile,
    build_banlist,
    build_fingerprint,
    build_profile,
    distance_matrix,
    load_human_baseline,
    write_profile,
)
from antislop.run_dir import RunDir, write_json

logger = logging.getLogger(__name__)
stage_log = StructuredLogger("antislop.pipeline")


# ---------------------------------------------------------------------------
# Profile
# ---------------------------------------------------------------------------

def load_human_tables(config: AntislopConfig) -> dict[str, FrequencyTable]:
    """
    Word baseline from human_profile_path (required); bigram/trigram
    baseline from human_ngram_profile_path. Without an n-gram baseline every
    n-gram is nodict.
    """
    path = require_path(config.human_profile_path, "human_profile_path")
    tables = load_human_baseline(path, ["word"], key="human_profile_path")
    if config.human_ngram_profile_path:
        ngram_path = require_path(config.human_ngram_profile_path, "human_ngram_profile_path")
        tables.update(load_human_baseline(ngram_path, ["bigram", "trigram"], key="human_ngram_profile_path"))
    else:
        logger.warning("No human_ngram_profile_path; all bigrams and trigrams are treated as nodict")
        tables.update({k: FrequencyTable.from_per_million(k, {}) for k in ("bigram", "trigram")})
    return tables


def _profile(config: AntislopConfig, corpus: list, human: dict[str, FrequencyTable]) -> SlopProfile:
    return build_profile(
        corpus,
        human,
        min_word_len=config.min_word_len_for_analysis,
        min_count=config.min_phrase_freq_to_keep,
        ngram_stopword_removal=config.generation_ngram_remove_stopwords,
        fingerprint_sizes=(config.fingerprint_words, config.fingerprint_bigrams, config.fingerprint_trigrams),
        min_prompts=config.fingerprint_min_prompts,
        caps=config.candidate_caps(),
    )


def extend_banlist(
    config: AntislopConfig,
    profile: SlopProfile,
    current: BanlistDocument,
    initial: bool,
) -> BanlistDocument:
    """current plus the profile's slop under the initial or subsequent quotas."""
    additions = build_banlist(
        profile,
        config.quotas(initial=initial),
        whitelist=config.whitelist_strings,
        existing=current,
        min_prompts=config.fingerprint_min_prompts,
        min_word_len=config.min_word_len_for_analysis,
    )
    return current.merge(additions)


def profile_stage(
    config: AntislopConfig,
    out_dir: Path,
    corpus: list,
    current: BanlistDocument,
    initial: bool = True,
    human: Optional[dict[str, FrequencyTable]] = None,
) -> tuple[SlopProfile, BanlistDocument]:
    """Profile one corpus, write profile.json and banlist.json."""
    human = human or load_human_tables(config)
    profile = _profile(config, corpus, human)
    banlist = extend_banlist(config, profile, current, initial)
    write_profile(profile, out_dir / "profile.json")
    write_banlist_document(banlist, out_dir / "banlist.json")
    stage_log.log_stage(
        "profile",
        documents=len(corpus),
        banlist_size=banlist.size(),
        added=banlist.size() - current.size(),
    )
    return profile, banlist


def profile_corpora(config: AntislopConfig, out_dir: Path) -> tuple[SlopProfile, BanlistDocument]:
    """
    The `profile` command. All configured corpora are profiled together for
    the banlist; with more than one corpus each also gets its own
    fingerprint and a pairwise rank-distance matrix is written.
    """
    paths = list(config.profile_corpus_paths)
    if config.profile_corpus_path:
        paths.insert(0, config.profile_corpus_path)
    if not paths:
        raise ConfigError("config key `profile_corpus_path` is required for this stage")
    key = "profile_corpus_path" if config.profile_corpus_path else "profile_corpus_paths"
    corpora = {str(p): read_corpus(require_path(p, key)) for p in paths}
    human = load_human_tables(config)

    combined = [doc for docs in corpora.values() for doc in docs]
    profile, banlist = profile_stage(config, out_dir, combined, config.user_banlist(), initial=True, human=human)

    if len(corpora) > 1:
        fingerprints = {}
        for path, docs in corpora.items():
            entries = _profile(config, docs, human).entries
            fingerprints[Path(path).stem] = build_fingerprint(
                entries,
                config.fingerprint_words,
                config.fingerprint_bigrams,
                config.fingerprint_trigrams,
                min_prompts=config.fingerprint_min_prompts,
            )
        write_json({name: fp.model_dump() for name, fp in fingerprints.items()}, out_dir / "fingerprints.json")
        distance_matrix(fingerprints).to_csv(out_dir / "distance_matrix.csv", float_format="%.10g")
    return profile, banlist


# ---------------------------------------------------------------------------
# Generate
# ---------------------------------------------------------------------------

def compile_document(config: AntislopConfig, doc: BanlistDocument) -> Banlist:
    return banlist_from_document(doc, min_word_len=config.min_word_len_for_analysis)


def generate_stage(
    config: AntislopConfig,
    backend: ModelBackend,
    banlist_doc: BanlistDocument,
    out_dir: Path,
    id_prefix: str = "",
) -> GenerationRun:
    """
    Generate over the configured prompts and write corpus.jsonl,
    events.jsonl and stats.json. A backend failure is raised only after
    the finished part of the run has been written.
    """
    banlist = compile_document(config, banlist_doc)
    run = run_generations(
        backend,
        load_prompts(config),
        banlist,
        config.sampler_config(),
        seed=config.seed,
        template=config.generation_prompt_template,
        system_prompt=config.generation_system_prompt,
        threads=config.generation_threads,
        id_prefix=id_prefix,
        structured_logger=StructuredLogger("antislop.sampler"),
    )
    write_jsonl(run.records, out_dir / "corpus.jsonl")
    write_jsonl(run.events, out_dir / "events.jsonl")
    write_json(
        {**run.tracker.summary(), "complete": run.complete, "per_generation": run.per_generation},
        out_dir / "stats.json",
    )
    stage_log.log_stage("generate", **run.tracker.summary(), complete=run.complete)
    if run.error is not None:
        raise run.error
    return run


# ---------------------------------------------------------------------------
# FTPO
# ---------------------------------------------------------------------------

@dataclass
class FtpoOutcome:
    samples: list[FtpoSample]
    report: Optional[FtpoBatchReport]
    captured: int
    below_minimum: bool


def loss_params(config: AntislopConfig) -> FtpoLossParams:
    return FtpoLossParams(
        m=config.ftpo_clip_epsilon_logits,
        tau_target=config.ftpo_tau_mse_target,
        lambda_target=config.ftpo_lambda_mse_target,
        lambda_nontarget=config.ftpo_lambda_mse,
        detach_taper_weight=config.ftpo_detach_taper_weight,
    )


def _batch_report(config: AntislopConfig, samples: list[FtpoSample], out_dir: Path) -> Optional[FtpoBatchReport]:
    if not config.ftpo_reference_spec_path:
        return None
    reference = load_mock_spec(require_path(config.ftpo_reference_spec_path, "ftpo_reference_spec_path"))
    policy = None
    if config.ftpo_policy_spec_path:
        policy = load_mock_spec(require_path(config.ftpo_policy_spec_path, "ftpo_policy_spec_path"))
    try:
        provider = MockLogitProvider(reference, policy)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = batch_eval(samples, provider, loss_params(config), target_accuracy=config.finetune_early_stopping_wins)
    write_json(report.model_dump(), out_dir / "batch_report.json")
    return report


def ftpo_stage(
    config: AntislopConfig,
    events: list[BacktrackEvent],
    records: list[GenerationRecord],
    banlist_doc: BanlistDocument,
    out_dir: Path,
) -> FtpoOutcome:
    """Capture, regularize and write the FTPO dataset; evaluate it when a logit source is configured."""
    captured = capture_dataset(
        events,
        prompts_by_generation(records),
        compile_document(config, banlist_doc),
        min_chosen_tokens=config.ftpo_sample_min_chosen_tokens,
    )
    samples = regularize_dataset(
        captured,
        config.ftpo_sample_rejected_regularisation_strength,
        config.ftpo_sample_chosen_regularisation_strength,
        seed=config.seed,
    )
    write_dataset(samples, out_dir / "dataset.jsonl")
    return _finish_ftpo(config, samples, len(captured), out_dir)


def _finish_ftpo(config: AntislopConfig, samples: list[FtpoSample], captured: int, out_dir: Path) -> FtpoOutcome:
    below = len(samples) < config.ftpo_min_dataset_size
    if below:
        logger.warning(
            f"FTPO dataset has {len(samples)} samples, below ftpo_min_dataset_size={config.ftpo_min_dataset_size}"
        )
    report = _batch_report(config, samples, out_dir)
    stage_log.log_stage(
        "ftpo",
        captured=captured,
        samples=len(samples),
        below_minimum=below,
        pref_accuracy=report.pref_accuracy if report else None,
    )
    return FtpoOutcome(samples=samples, report=report, captured=captured, below_minimum=below)


def ftpo_from_files(config: AntislopConfig, out_dir: Path) -> FtpoOutcome:
    """
    The `ftpo` command: an existing dataset (finetune_ftpo_dataset) is only
    evaluated; otherwise the dataset is captured from an event log and the
    corpus that produced it.
    """
    if config.finetune_ftpo_dataset:
        samples = read_dataset(require_path(config.finetune_ftpo_dataset, "finetune_ftpo_dataset"))
        return _finish_ftpo(config, samples, len(samples), out_dir)
    events = read_jsonl(require_path(config.ftpo_events_path, "ftpo_events_path"), BacktrackEvent)
    records = read_jsonl(require_path(config.ftpo_corpus_path, "ftpo_corpus_path"), GenerationRecord)
    return ftpo_stage(config, events, records, config.user_banlist(), out_dir)


# ---------------------------------------------------------------------------
# Eval
# ---------------------------------------------------------------------------

def eval_stage(
    config: AntislopConfig,
    baseline: list[CorpusDocument],
    treated: list[CorpusDocument],
    banlist_doc: BanlistDocument,
    out_dir: Path,
) -> EvalReport:
    """Suppression and diversity; writes report.json and per-document CSVs."""
    banlist = compile_document(config, banlist_doc)
    report = evaluate(baseline, treated, banlist, config.eval_mattr_window, config.eval_hdd_sample_size)
    write_json(report.model_dump(), out_dir / "report.json")
    for name, docs in (("baseline", baseline), ("treated", treated)):
        write_rows(
            document_rows(docs, banlist, config.eval_mattr_window, config.eval_hdd_sample_size),
            out_dir / f"{name}_rows.csv",
        )
    stage_log.log_stage(
        "eval",
        suppression_rate=report.suppression.rate,
        baseline_aggregate=report.baseline.aggregate,
        treated_aggregate=report.treated.aggregate,
    )
    return report


def eval_from_files(config: AntislopConfig, out_dir: Path) -> EvalReport:
    baseline = read_corpus(require_path(config.eval_baseline_corpus_path, "eval_baseline_corpus_path"))
    treated = read_corpus(require_path(config.eval_treated_corpus_path, "eval_treated_corpus_path"))
    return eval_stage(config, baseline, treated, config.user_banlist(), out_dir)


def as_corpus(records: list[GenerationRecord]) -> list[CorpusDocument]:
    return [CorpusDocument(prompt_id=r.prompt_id, text=r.text) for r in records]


# ---------------------------------------------------------------------------
# End-to-end graph
# ---------------------------------------------------------------------------

class PipelineState(TypedDict, total=False):
    iteration: int
    banlist: BanlistDocument              # accumulated bans
    generation_banlist: BanlistDocument   # bans the latest generation ran with
    baseline_records: list[GenerationRecord]
    records: list[GenerationRecord]
    events: list[BacktrackEvent]
    ftpo: FtpoOutcome
    report: EvalReport


class Pipeline:
    """
    Iteration 0 generates with the user's bans only and profiles; each
    later iteration generates with the accumulated banlist and adds new
    slop under the subsequent quotas. FTPO uses the last iteration's
    events; eval compares iteration 0 with the last iteration.
    """

    def __init__(self, config: AntislopConfig, run_dir: RunDir, backend: ModelBackend):
        self.config = config
        self.run_dir = run_dir
        self.backend = backend
        self.human = load_human_tables(config)
        self.graph = self._build_graph()

    def _build_graph(self):
        workflow = StateGraph(PipelineState)
        workflow.add_node("generate", self.generate_node)
        workflow.add_node("profile", self.profile_node)
        workflow.add_node("ftpo", self.ftpo_node)
        workflow.add_node("eval", self.eval_node)
        workflow.add_edge(START, "generate")
        workflow.add_edge("generate", "profile")
        workflow.add_conditional_edges("profile", self.next_step, {"generate": "generate", "ftpo": "ftpo"})
        workflow.add_edge("ftpo", "eval")
        workflow.add_edge("eval", END)
        return workflow.compile()

    def generate_node(self, state: PipelineState) -> dict[str, Any]:
        k = state["iteration"]
        banlist = state["banlist"]
        run = generate_stage(self.config, self.backend, banlist, self.run_dir.iteration(k), id_prefix=f"{k}-")
        update = {"records": run.records, "events": run.events, "generation_banlist": banlist}
        if k == 0:
            update["baseline_records"] = run.records
        return update

    def profile_node(self, state: PipelineState) -> dict[str, Any]:
        k = state["iteration"]
        _, banlist = profile_stage(
            self.config,
            self.run_dir.iteration(k),
            as_corpus(state["records"]),
            state["banlist"],
            initial=k == 0,
            human=self.human,
        )
        return {"banlist": banlist, "iteration": k + 1}

    def next_step(self, state: PipelineState) -> str:
        return "generate" if state["iteration"] < self.config.num_iterations else "ftpo"

    def ftpo_node(self, state: PipelineState) -> dict[str, Any]:
        outcome = ftpo_stage(
            self.config, state["events"], state["records"], state["generation_banlist"], self.run_dir.ftpo
        )
        return {"ftpo": outcome}

    def eval_node(self, state: PipelineState) -> dict[str, Any]:
        report = eval_stage(
            self.config,
            as_corpus(state["baseline_records"]),
            as_corpus(state["records"]),
            state["generation_banlist"],
            self.run_dir.eval,
        )
        return {"report": report}

    def run(self) -> PipelineState:
        initial: PipelineState = {"iteration": 0, "banlist": self.config.user_banlist()}
        limit = 4 * self.config.num_iterations + 10
        return self.graph.invoke(initial, config={"recursion_limit": limit})


def run_pipeline(config: AntislopConfig, run_dir: RunDir, backend: Optional[ModelBackend] = None) -> PipelineState:
    backend = backend or build_backend(config)
    return Pipeline(config, run_dir, backend).run()
