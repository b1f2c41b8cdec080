"""
Run directory layout and reproducibility manifest.

    <base>/run_<YYYYmmdd_HHMMSS>/
        config.yaml, manifest.json
        iter_<k>/corpus.jsonl, events.jsonl, stats.json, profile.json, banlist.json
        ftpo/dataset.jsonl, batch_report.json
        eval/report.json, baseline_rows.csv, treated_rows.csv
"""

import hashlib
import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from antislop import __version__
from antislop.config import AntislopConfig, config_hash, dump_config

logger = logging.getLogger(__name__)

_TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "pyahocorasick", "openai", "langgraph")


def file_digest(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def package_versions() -> dict[str, Optional[str]]:
    versions = {}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_json(data: Any, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


class RunDir:
    """Fixed subpaths under one run root."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @classmethod
    def create(cls, base_dir: Union[str, Path], out: Optional[Union[str, Path]] = None) -> "RunDir":
        """Use `out` as is, or a new timestamped directory under base_dir."""
        if out is not None:
            return cls(out)
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S")
        return cls(Path(base_dir) / f"run_{stamp}")

    def iteration(self, k: int) -> Path:
        path = self.root / f"iter_{k}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def ftpo(self) -> Path:
        path = self.root / "ftpo"
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def eval(self) -> Path:
        path = self.root / "eval"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_manifest(self, config: AntislopConfig, command: str, inputs: Iterable[Union[str, Path]] = ()) -> Path:
        """
        Record what is needed to reproduce the run: the config (and its
        hash), seed, package versions and digests of every input file.
        """
        dump_config(config, self.root / "config.yaml")
        digests = {str(p): file_digest(p) for p in inputs if p and Path(p).is_file()}
        manifest = {
            "command": command,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "antislop_version": __version__,
            "python_version": platform.python_version(),
            "packages": package_versions(),
            "config_hash": config_hash(config),
            "seed": config.seed,
            "inputs": digests,
        }
        path = self.root / "manifest.json"
        write_json(manifest, path)
        logger.info(f"Run directory: {self.root}")
        return path
