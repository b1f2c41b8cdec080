"""
Command line entry point.

    python main.py profile  --config configs/default.yaml
    python main.py generate --config configs/default.yaml --seed 7
    python main.py ftpo     --config configs/default.yaml --out runs/ftpo
    python main.py eval     --config configs/default.yaml
    python main.py pipeline --config configs/default.yaml

Exit codes: 0 success, 1 user/config error, 2 backend failure,
3 internal invariant violation.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from antislop import __version__
from antislop.config import AntislopConfig, load_config
from antislop.error_handling import AntislopError
from antislop.generation import build_backend
from antislop.logging_config import configure_logging
from antislop.pipeline import eval_from_files, ftpo_from_files, generate_stage, profile_corpora, run_pipeline
from antislop.run_dir import RunDir

logger = logging.getLogger("antislop.cli")

COMMANDS = ("profile", "generate", "ftpo", "eval", "pipeline")


def _inputs(config: AntislopConfig) -> list[str]:
    """Every input file a run may read, for the manifest digests."""
    paths = [
        config.human_profile_path,
        config.human_ngram_profile_path,
        config.banlist_path,
        config.generation_mock_spec_path,
        config.profile_corpus_path,
        *config.profile_corpus_paths,
        config.ftpo_events_path,
        config.ftpo_corpus_path,
        config.finetune_ftpo_dataset,
        config.ftpo_reference_spec_path,
        config.ftpo_policy_spec_path,
        config.eval_baseline_corpus_path,
        config.eval_treated_corpus_path,
    ]
    prompt_dir = Path(config.generation_prompts_dir) / config.generation_prompt_set
    if prompt_dir.is_dir():
        paths.extend(str(p) for p in sorted(prompt_dir.glob("*.yaml")))
    return [p for p in paths if p]


def cmd_profile(config: AntislopConfig, run_dir: RunDir) -> int:
    """Profile corpora and build the banlist."""
    _, banlist = profile_corpora(config, run_dir.root)
    logger.info(f"Banlist with {banlist.size()} entries written to {run_dir.root / 'banlist.json'}")
    return 0


def cmd_generate(config: AntislopConfig, run_dir: RunDir) -> int:
    """Generate with backtracking against the user banlist."""
    backend = build_backend(config)
    run = generate_stage(config, backend, config.user_banlist(), run_dir.root)
    logger.info(f"Generated {len(run.records)} outputs with {len(run.events)} backtrack events")
    return 0


def cmd_ftpo(config: AntislopConfig, run_dir: RunDir) -> int:
    """Build (and optionally evaluate) the FTPO dataset."""
    outcome = ftpo_from_files(config, run_dir.root)
    logger.info(f"FTPO dataset: {len(outcome.samples)} samples from {outcome.captured} captured")
    return 0


def cmd_eval(config: AntislopConfig, run_dir: RunDir) -> int:
    """Suppression and lexical diversity of two corpora."""
    report = eval_from_files(config, run_dir.root)
    logger.info(
        f"Suppression {report.suppression.rate:.2f}%, diversity aggregate {report.treated.aggregate:.2f}"
    )
    return 0


def cmd_pipeline(config: AntislopConfig, run_dir: RunDir) -> int:
    """All stages, iterated."""
    state = run_pipeline(config, run_dir)
    logger.info(f"Pipeline finished after {state['iteration']} iterations; outputs in {run_dir.root}")
    return 0


HANDLERS = {
    "profile": cmd_profile,
    "generate": cmd_generate,
    "ftpo": cmd_ftpo,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antislop",
        description="Profile, suppress and train away over-represented writing patterns.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run config")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--out", default=None, help="Output directory (default: timestamped run under experiment_base_dir)")
    common.add_argument("--log-level", default=None, help="Override the config log_level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or name))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging("INFO")
    try:
        config = load_config(args.config, overrides={"seed": args.seed, "log_level": args.log_level})
        configure_logging(config.log_level)
        run_dir = RunDir.create(config.experiment_base_dir, args.out)
        run_dir.write_manifest(config, args.command, _inputs(config))
        return HANDLERS[args.command](config, run_dir)
    except AntislopError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


def run() -> None:
    sys.exit(main())
