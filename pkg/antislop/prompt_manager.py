"""
Prompt Manager - versioned writing-prompt sets stored as YAML files.

Layout: <prompts_dir>/<set>/v1.0.0.yaml, v1.1.0.yaml, ... and optionally
current.yaml. Asking for "current" without a current.yaml falls back to the
newest version.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import yaml
from langchain_core.prompts import PromptTemplate
from pydantic import BaseModel, Field, ValidationError, field_validator

from antislop.error_handling import ConfigError

logger = logging.getLogger(__name__)


class WritingPrompt(BaseModel):
    id: str
    text: str = Field(min_length=1)

    @field_validator("id", mode="before")
    @classmethod
    def _coerce_id(cls, value):
        return str(value)


class PromptSet(BaseModel):
    version: str
    description: str = ""
    prompts: list[WritingPrompt] = Field(default_factory=list)
    file_path: Optional[str] = None

    @field_validator("prompts", mode="before")
    @classmethod
    def _accept_bare_strings(cls, value):
        # plain strings get their 0-based index as id
        if isinstance(value, list):
            return [{"id": str(i), "text": p} if isinstance(p, str) else p for i, p in enumerate(value)]
        return value


def _version_key(stem: str) -> tuple:
    parts = stem.lstrip("v").split(".")
    return tuple(int(p) if p.isdigit() else 0 for p in parts)


class PromptManager:
    """Loads versioned prompt sets."""

    def __init__(self, prompts_dir: Union[str, Path] = "prompts"):
        self.prompts_dir = Path(prompts_dir)

    def get_version_history(self, set_name: str) -> list[str]:
        """All versions of a set, newest first."""
        set_dir = self.prompts_dir / set_name
        if not set_dir.exists():
            return []
        return sorted((f.stem for f in set_dir.glob("v*.yaml")), key=_version_key, reverse=True)

    def _resolve(self, set_name: str, version: str) -> Path:
        set_dir = self.prompts_dir / set_name
        if version != "current":
            return set_dir / f"{version}.yaml"
        current = set_dir / "current.yaml"
        if current.exists():
            return current
        history = self.get_version_history(set_name)
        if not history:
            raise ConfigError(f"No prompt versions found in {set_dir}")
        logger.info(f"No current.yaml for prompt set '{set_name}', using {history[0]}")
        return set_dir / f"{history[0]}.yaml"

    def load_prompt_set(self, set_name: str, version: str = "current") -> PromptSet:
        """
        Load one version of a prompt set.

        Raises:
            ConfigError: missing file or invalid content
        """
        prompt_file = self._resolve(set_name, version)
        if not prompt_file.exists():
            raise ConfigError(f"Prompt set not found: {prompt_file}")
        with open(prompt_file, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        try:
            prompt_set = PromptSet.model_validate({**data, "file_path": str(prompt_file)})
        except ValidationError as e:
            raise ConfigError(f"Invalid prompt set {prompt_file}: {e}") from e
        ids = [p.id for p in prompt_set.prompts]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"Duplicate prompt ids in {prompt_file}")
        return prompt_set


def compile_prompt(template: str, prompt: str, system_prompt: str = "") -> str:
    """Fill the generation template; a system prompt, when set, goes first."""
    text = PromptTemplate.from_template(template).format(prompt=prompt)
    if system_prompt:
        text = f"{system_prompt}\n\n{text}"
    return text
