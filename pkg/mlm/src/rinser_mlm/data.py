"""Corpus JSONL access.

The corpus file is the contract with the extraction pipeline: a schema
header line followed by one example per line carrying api, variant, tokens,
mask_positions, mask_labels, and source.  Tokens are stored unmasked; the
mask positions name which token indices are prediction targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO

CORPUS_SCHEMA = "rinser-corpus/1"


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class Example:
    api: str
    variant: str
    tokens: tuple[str, ...]
    mask_positions: tuple[int, ...]
    mask_labels: tuple[str, ...]
    source: dict


def _check_record(obj: object, index: int) -> Example:
    if not isinstance(obj, dict):
        raise EngineError(f"record {index}: expected an object")
    try:
        tokens = tuple(str(t) for t in obj["tokens"])
        positions = tuple(int(p) for p in obj["mask_positions"])
        labels = tuple(str(s) for s in obj["mask_labels"])
        example = Example(
            api=str(obj["api"]),
            variant=str(obj["variant"]),
            tokens=tokens,
            mask_positions=positions,
            mask_labels=labels,
            source=dict(obj.get("source", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise EngineError(f"record {index}: {exc}") from None
    if len(positions) != len(labels):
        raise EngineError(f"record {index}: mask positions and labels disagree")
    for pos in positions:
        if not 0 <= pos < len(tokens):
            raise EngineError(f"record {index}: mask position {pos} out of range")
    return example


def read_corpus(source: str | Path | IO[str]) -> list[Example]:
    """Read and validate a corpus file.  Errors carry the record index
    (header is record 0)."""
    if hasattr(source, "read"):
        lines = source.read().split("\n")  # type: ignore[union-attr]
    else:
        lines = Path(source).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EngineError("record 0: missing schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise EngineError(f"record 0: bad JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("schema") != CORPUS_SCHEMA:
        raise EngineError(f"record 0: expected schema header {CORPUS_SCHEMA!r}")
    out: list[Example] = []
    for index, line in enumerate(lines[1:], start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EngineError(f"record {index}: bad JSON ({exc})") from None
        out.append(_check_record(obj, index))
    return out
