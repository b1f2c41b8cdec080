"""
JSON-lines IO for corpora, event logs and datasets.
"""

import json
from pathlib import Path
from typing import Iterable, TypeVar, Union

from pydantic import BaseModel, ValidationError

from antislop.error_handling import DatasetError
from antislop.models import CorpusDocument

M = TypeVar("M", bound=BaseModel)


def write_jsonl(records: Iterable[BaseModel], path: Union[str, Path]) -> int:
    """Write one JSON object per line; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.model_dump(mode="json"), ensure_ascii=False, sort_keys=True))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path: Union[str, Path], model: type[M]) -> list[M]:
    """
    Read and validate a JSON-lines file. Blank lines are skipped.

    Raises:
        DatasetError: missing file, or a line that does not parse/validate
            (the message carries the 1-based line number)
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"File not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as e:
                first = e.errors()[0]
                where = ".".join(str(p) for p in first["loc"])
                raise DatasetError(f"{path}: {where or 'record'}: {first['msg']}", line_number) from e
    return records


def read_corpus(path: Union[str, Path]) -> list[CorpusDocument]:
    """Corpus JSONL with at least {prompt_id, text} per line."""
    return read_jsonl(path, CorpusDocument)
