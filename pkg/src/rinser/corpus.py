"""Corpus emission with MLM masking, plus the API reference database.

Corpus files are JSON Lines with a schema header record; masking picks a
fixed count of positions (ceil(rate * n)) so outputs are exactly
reproducible for a given example and seed.  Mask positions are indices into
the token list; the literal mask substitution happens in the training
engine, which keeps these files variant-agnostic.

The reference database records, per API, the modal parameter count and modal
name tuple over all observations, each with a confidence equal to the modal
frequency divided by the number of observations.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .extractor import ApiCodeprint
from .listing import ApiCatalog
from .normalize import VARIANTS, NormalizedCodeprint

CORPUS_SCHEMA = "rinser-corpus/1"
MASK_MODES = ("pretrain-random", "api-mask")
DEFAULT_MAX_TOKENS = 512


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusExample:
    api: str
    variant: str
    tokens: tuple[str, ...]
    mask_positions: tuple[int, ...]
    mask_labels: tuple[str, ...]
    source: tuple[str, str, int]  # (listing id, function, callsite address)


def _example_rng(seed: int, ncp_stream: tuple[str, ...], variant: str) -> random.Random:
    # Seed from the example content, not from iteration order, so a given
    # (example, seed) pair masks identically no matter where it sits in a run.
    digest = hashlib.sha256(
        f"{seed}|{variant}|{' '.join(ncp_stream)}".encode()
    ).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def build_example(
    ncp: NormalizedCodeprint,
    mode: str,
    mask_rate: float = 0.15,
    seed: int = 0,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    listing_id: str = "<listing>",
) -> CorpusExample | None:
    """Build one corpus example, or None for a zero-parameter codeprint
    (those are unlearnable and are filtered, not raised).  Truncation keeps
    the api token and drops trailing tokens."""
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}")
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask rate {mask_rate} outside [0, 1]")
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    if not ncp.tokens:
        return None
    tokens = ncp.stream()[:max_tokens]
    n = len(tokens)
    if mode == "api-mask":
        positions: list[int] = [0]
    else:
        count = math.ceil(mask_rate * n)
        rng = _example_rng(seed, tokens, ncp.variant)
        positions = sorted(rng.sample(range(n), count))
    return CorpusExample(
        api=ncp.api_token,
        variant=ncp.variant,
        tokens=tokens,
        mask_positions=tuple(positions),
        mask_labels=tuple(tokens[i] for i in positions),
        source=(listing_id, ncp.function_name, ncp.callsite_address),
    )


def example_to_json(ex: CorpusExample) -> str:
    return json.dumps(
        {
            "api": ex.api,
            "variant": ex.variant,
            "tokens": list(ex.tokens),
            "mask_positions": list(ex.mask_positions),
            "mask_labels": list(ex.mask_labels),
            "source": {
                "listing": ex.source[0],
                "function": ex.source[1],
                "callsite": ex.source[2],
            },
        },
        separators=(",", ":"),
    )


def emit_corpus(examples: Iterable[CorpusExample], destination: str | Path | IO[str]) -> int:
    """Write the header record plus one record per example.  Returns the
    number of examples written."""
    if hasattr(destination, "write"):
        return _emit_corpus_stream(examples, destination)  # type: ignore[arg-type]
    with open(destination, "w", encoding="utf-8") as fh:
        return _emit_corpus_stream(examples, fh)


def _emit_corpus_stream(examples: Iterable[CorpusExample], fh: IO[str]) -> int:
    fh.write(json.dumps({"schema": CORPUS_SCHEMA}, separators=(",", ":")) + "\n")
    count = 0
    for ex in examples:
        fh.write(example_to_json(ex) + "\n")
        count += 1
    return count


def _check_record(obj: object, index: int) -> CorpusExample:
    if not isinstance(obj, dict):
        raise CorpusError(f"record {index}: expected an object")

    def fail(msg: str) -> CorpusError:
        return CorpusError(f"record {index}: {msg}")

    api = obj.get("api")
    variant = obj.get("variant")
    tokens = obj.get("tokens")
    positions = obj.get("mask_positions")
    labels = obj.get("mask_labels")
    source = obj.get("source")
    if not isinstance(api, str) or not api:
        raise fail("missing or empty 'api'")
    if variant not in VARIANTS:
        raise fail(f"bad variant {variant!r}")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise fail("'tokens' must be a list of strings")
    if not isinstance(positions, list) or not all(isinstance(p, int) for p in positions):
        raise fail("'mask_positions' must be a list of integers")
    if any(p < 0 or p >= len(tokens) for p in positions):
        raise fail("mask position out of bounds")
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise fail("mask positions must be strictly increasing")
    if not isinstance(labels, list) or len(labels) != len(positions):
        raise fail("'mask_labels' must align with 'mask_positions'")
    if not isinstance(source, dict):
        raise fail("missing 'source'")
    return CorpusExample(
        api=api,
        variant=variant,
        tokens=tuple(tokens),
        mask_positions=tuple(positions),
        mask_labels=tuple(str(x) for x in labels),
        source=(
            str(source.get("listing", "")),
            str(source.get("function", "")),
            int(source.get("callsite", 0)),
        ),
    )


def read_corpus(source: str | Path | IO[str]) -> list[CorpusExample]:
    """Read and validate a corpus file.  Errors carry the record index
    (header is record 0)."""
    if hasattr(source, "read"):
        lines = source.read().split("\n")  # type: ignore[union-attr]
    else:
        lines = Path(source).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusError("record 0: missing schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"record 0: bad JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("schema") != CORPUS_SCHEMA:
        raise CorpusError(f"record 0: expected schema header {CORPUS_SCHEMA!r}")
    out: list[CorpusExample] = []
    for index, line in enumerate(lines[1:], start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"record {index}: bad JSON ({exc})") from None
        out.append(_check_record(obj, index))
    return out


@dataclass(frozen=True)
class RefDbEntry:
    api: str
    modal_param_count: int
    modal_param_names: tuple[str, ...]
    confidence_count: float
    confidence_names: float
    observations: int


@dataclass
class RefDb:
    entries: dict[str, RefDbEntry] = field(default_factory=dict)

    def summary(self) -> dict[str, float]:
        """Mean and population standard deviation of both confidences."""
        if not self.entries:
            return {
                "mean_conf_count": 0.0,
                "stddev_conf_count": 0.0,
                "mean_conf_names": 0.0,
                "stddev_conf_names": 0.0,
            }
        counts = [e.confidence_count for e in self.entries.values()]
        names = [e.confidence_names for e in self.entries.values()]
        return {
            "mean_conf_count": statistics.fmean(counts),
            "stddev_conf_count": statistics.pstdev(counts),
            "mean_conf_names": statistics.fmean(names),
            "stddev_conf_names": statistics.pstdev(names),
        }


def build_refdb(cps: Iterable[ApiCodeprint]) -> RefDb:
    """Tally parameter counts and name tuples per API.  Name tuples are
    recorded in argument order (reverse of push order) so they line up with
    catalog entries.  Count ties break toward the smaller count, name-tuple
    ties break lexicographically."""
    count_tallies: dict[str, Counter] = {}
    name_tallies: dict[str, Counter] = {}
    for cp in cps:
        names = tuple(reversed([p.param_name or "" for p in cp.params]))
        count_tallies.setdefault(cp.api_name, Counter())[len(cp.params)] += 1
        name_tallies.setdefault(cp.api_name, Counter())[names] += 1
    db = RefDb()
    for api in sorted(count_tallies):
        counts = count_tallies[api]
        names = name_tallies[api]
        n = sum(counts.values())
        best_count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        best_names = min(names.items(), key=lambda kv: (-kv[1], kv[0]))
        db.entries[api] = RefDbEntry(
            api=api,
            modal_param_count=best_count[0],
            modal_param_names=best_names[0],
            confidence_count=best_count[1] / n,
            confidence_names=best_names[1] / n,
            observations=n,
        )
    return db


@dataclass(frozen=True)
class RefDbValidation:
    checked: int
    count_matches: int
    name_matches: int
    missing: tuple[str, ...]

    @property
    def count_accuracy(self) -> float:
        return self.count_matches / self.checked if self.checked else 0.0

    @property
    def name_accuracy(self) -> float:
        return self.name_matches / self.checked if self.checked else 0.0


def validate_refdb(db: RefDb, catalog: ApiCatalog) -> RefDbValidation:
    """Compare modal counts and name tuples against the catalog.  Name
    comparison is case-insensitive and order-sensitive.  APIs missing from
    the catalog are listed and excluded from the denominators."""
    checked = 0
    count_matches = 0
    name_matches = 0
    missing: list[str] = []
    for api in sorted(db.entries):
        entry = db.entries[api]
        cat = catalog.lookup(api)
        if cat is None:
            missing.append(api)
            continue
        checked += 1
        if entry.modal_param_count == cat.arity:
            count_matches += 1
        observed = tuple(s.lower() for s in entry.modal_param_names)
        expected = tuple(s.lower() for s in cat.params)
        if observed == expected:
            name_matches += 1
    return RefDbValidation(
        checked=checked,
        count_matches=count_matches,
        name_matches=name_matches,
        missing=tuple(missing),
    )


def emit_refdb(db: RefDb, destination: str | Path | IO[str]) -> int:
    rows = [
        json.dumps(
            {
                "api": e.api,
                "count": e.modal_param_count,
                "names": list(e.modal_param_names),
                "conf_count": e.confidence_count,
                "conf_names": e.confidence_names,
                "n": e.observations,
            },
            separators=(",", ":"),
        )
        for e in (db.entries[a] for a in sorted(db.entries))
    ]
    text = "".join(row + "\n" for row in rows)
    if hasattr(destination, "write"):
        destination.write(text)  # type: ignore[union-attr]
    else:
        Path(destination).write_text(text, encoding="utf-8")
    return len(rows)


def read_refdb(source: str | Path | IO[str]) -> RefDb:
    if hasattr(source, "read"):
        lines = source.read().split("\n")  # type: ignore[union-attr]
    else:
        lines = Path(source).read_text(encoding="utf-8").split("\n")
    db = RefDb()
    for index, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"refdb record {index}: bad JSON ({exc})") from None
        try:
            entry = RefDbEntry(
                api=str(obj["api"]),
                modal_param_count=int(obj["count"]),
                modal_param_names=tuple(str(s) for s in obj["names"]),
                confidence_count=float(obj["conf_count"]),
                confidence_names=float(obj["conf_names"]),
                observations=int(obj["n"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"refdb record {index}: {exc}") from None
        db.entries[entry.api] = entry
    return db


def iter_examples(
    ncps: Iterable[NormalizedCodeprint],
    mode: str,
    mask_rate: float = 0.15,
    seed: int = 0,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    listing_id: str = "<listing>",
) -> Iterator[CorpusExample]:
    """build_example over a stream, dropping zero-parameter codeprints."""
    for ncp in ncps:
        ex = build_example(ncp, mode, mask_rate, seed, max_tokens, listing_id)
        if ex is not None:
            yield ex
