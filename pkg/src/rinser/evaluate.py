"""Prediction scoring: exact accuracy, per-parameter-count breakdown,
macro-average per API, context-aware scoring over embedding groups, and
capability (intent) tagging.

Context-aware scoring accepts a prediction when the ground truth lies in the
predicted API's cosine-similarity group, so APIs that are interchangeable in
context (send/recv, A/W encodings are NOT merged though) count as hits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

INTENT_LABELS = (
    "enumeration",
    "injection",
    "evasion",
    "spying",
    "network",
    "anti-debugging",
    "ransomware",
    "dropper",
    "helper",
)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    truth: str
    topk: tuple[tuple[str, float], ...]
    param_count: int
    variant: str = "normal"

    def __post_init__(self):
        if not self.topk:
            raise EvalError(f"prediction for {self.truth!r} has an empty ranking")
        scores = [s for _, s in self.topk]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise EvalError(f"prediction for {self.truth!r} has increasing scores")

    @property
    def top1(self) -> str:
        return self.topk[0][0]


def _bucket(param_count: int) -> str:
    if param_count >= 6:
        return ">=6"
    return str(param_count)


_BUCKET_ORDER = {"0": 0, "1": 1, "2": 2, "3": 3, "4": 4, "5": 5, ">=6": 6}


@dataclass(frozen=True)
class EvalRow:
    bucket: str
    samples: int
    correct: int
    unique_apis: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.samples if self.samples else 0.0


@dataclass
class EvalReport:
    total: int
    correct: int
    rows: tuple[EvalRow, ...]
    per_api: dict[str, tuple[int, int]]  # api -> (samples, correct)
    unique_correct: int
    aw_pair_misses: int
    macro_mean: float
    context_aware: float | None = None
    intents: dict[str, int] = field(default_factory=dict)
    intents_unknown: tuple[str, ...] = ()

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        out = {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "rows": [
                {
                    "params": r.bucket,
                    "samples": r.samples,
                    "correct": r.correct,
                    "accuracy": r.accuracy,
                    "unique_apis": r.unique_apis,
                }
                for r in self.rows
            ],
            "per_api": {
                api: {"samples": s, "correct": c}
                for api, (s, c) in sorted(self.per_api.items())
            },
            "unique_correct": self.unique_correct,
            "aw_pair_misses": self.aw_pair_misses,
            "macro_mean": self.macro_mean,
        }
        if self.context_aware is not None:
            out["context_aware"] = self.context_aware
        if self.intents or self.intents_unknown:
            out["intents"] = dict(sorted(self.intents.items()))
            out["intents_unknown"] = list(self.intents_unknown)
        return out


def _is_aw_pair(a: str, b: str) -> bool:
    a, b = a.lower(), b.lower()
    if len(a) < 2 or len(b) < 2 or a == b:
        return False
    return a[:-1] == b[:-1] and {a[-1], b[-1]} == {"a", "w"}


def format_percent(numerator: int, denominator: int) -> str:
    """Truncated two-decimal percentage, computed in exact integer math."""
    if denominator <= 0:
        return "0.00%"
    basis = numerator * 10000 // denominator
    return f"{basis // 100}.{basis % 100:02d}%"


def score_exact(records: Sequence[PredictionRecord]) -> EvalReport:
    """Top-1 exact-match accuracy with per-parameter-count rows and a
    per-API tally.  Empty input is an error, not an empty report."""
    if not records:
        raise EvalError("cannot score an empty record set")
    by_bucket: dict[str, list[PredictionRecord]] = {}
    per_api: dict[str, list[int]] = {}
    correct = 0
    aw_misses = 0
    correct_apis: set[str] = set()
    for rec in records:
        by_bucket.setdefault(_bucket(rec.param_count), []).append(rec)
        tally = per_api.setdefault(rec.truth, [0, 0])
        tally[0] += 1
        if rec.top1 == rec.truth:
            tally[1] += 1
            correct += 1
            correct_apis.add(rec.truth)
        elif _is_aw_pair(rec.top1, rec.truth):
            aw_misses += 1
    rows = []
    for bucket in sorted(by_bucket, key=_BUCKET_ORDER.__getitem__):
        recs = by_bucket[bucket]
        hits = sum(1 for r in recs if r.top1 == r.truth)
        uniq = len({r.truth for r in recs if r.top1 == r.truth})
        rows.append(
            EvalRow(bucket=bucket, samples=len(recs), correct=hits, unique_apis=uniq)
        )
    macro = macro_average(records)
    return EvalReport(
        total=len(records),
        correct=correct,
        rows=tuple(rows),
        per_api={api: (s, c) for api, (s, c) in per_api.items()},
        unique_correct=len(correct_apis),
        aw_pair_misses=aw_misses,
        macro_mean=macro.mean,
    )


@dataclass(frozen=True)
class MacroReport:
    per_api: dict[str, float]
    mean: float
    histogram: tuple[int, ...]  # ten buckets: [0,.1) ... [.9,1.0]


def macro_average(records: Sequence[PredictionRecord]) -> MacroReport:
    """Mean of per-API accuracies; class imbalance does not weight it."""
    if not records:
        raise EvalError("cannot score an empty record set")
    per_api: dict[str, list[int]] = {}
    for rec in records:
        tally = per_api.setdefault(rec.truth, [0, 0])
        tally[0] += 1
        if rec.top1 == rec.truth:
            tally[1] += 1
    accuracies = {api: c / s for api, (s, c) in per_api.items()}
    histogram = [0] * 10
    for acc in accuracies.values():
        histogram[min(int(acc * 10), 9)] += 1
    return MacroReport(
        per_api=accuracies,
        mean=sum(accuracies.values()) / len(accuracies),
        histogram=tuple(histogram),
    )


@dataclass(frozen=True)
class ContextGroups:
    threshold: float
    groups: dict[str, frozenset[str]]


def build_context_groups(
    embeddings: Mapping[str, Sequence[float]], threshold: float = 0.91
) -> ContextGroups:
    """Group APIs by pairwise cosine similarity >= threshold.  APIs whose
    group would be empty are omitted.  Cosine is the standard definition
    over the raw vectors; a zero vector has no direction and is an error."""
    names = sorted(embeddings)
    if not names:
        return ContextGroups(threshold=threshold, groups={})
    matrix = np.asarray([embeddings[n] for n in names], dtype=np.float64)
    if matrix.ndim != 2:
        raise EvalError("embedding vectors must share one dimension")
    norms = np.linalg.norm(matrix, axis=1)
    for name, norm in zip(names, norms):
        if norm == 0.0:
            raise EvalError(f"embedding for {name!r} is a zero vector")
    unit = matrix / norms[:, None]
    cosines = unit @ unit.T
    groups: dict[str, frozenset[str]] = {}
    for i, name in enumerate(names):
        members = frozenset(
            names[j] for j in np.nonzero(cosines[i] >= threshold)[0] if j != i
        )
        if members:
            groups[name] = members
    return ContextGroups(threshold=threshold, groups=groups)


def score_context_aware(
    records: Sequence[PredictionRecord], groups: ContextGroups
) -> float:
    """Accuracy where a prediction also counts when the truth sits in the
    predicted API's context group.  Always >= exact accuracy."""
    if not records:
        raise EvalError("cannot score an empty record set")
    hits = 0
    for rec in records:
        if rec.top1 == rec.truth or rec.truth in groups.groups.get(rec.top1, ()):
            hits += 1
    return hits / len(records)


@dataclass
class IntentCatalog:
    _by_lower: dict[str, str] = field(default_factory=dict)

    def lookup(self, api: str) -> str | None:
        return self._by_lower.get(api.lower())

    def __len__(self) -> int:
        return len(self._by_lower)


def load_intent_catalog(text: str) -> IntentCatalog:
    """Load 'ApiName:intent' lines.  Intents come from the closed nine-label
    set; anything else is an error."""
    catalog = IntentCatalog()
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, intent = line.partition(":")
        name = name.strip()
        intent = intent.strip().lower()
        if not sep or not name:
            raise EvalError(f"line {line_no}: expected 'ApiName:intent'")
        if intent not in INTENT_LABELS:
            raise EvalError(f"line {line_no}: unknown intent {intent!r}")
        if name.lower() in catalog._by_lower:
            raise EvalError(f"line {line_no}: duplicate API {name!r}")
        catalog._by_lower[name.lower()] = intent
    return catalog


@dataclass(frozen=True)
class IntentReport:
    counts: dict[str, int]
    unknown: tuple[str, ...]


def tag_intents(apis: Iterable[str], catalog: IntentCatalog) -> IntentReport:
    """Count intents over the input multiset; uncataloged names are listed
    once each in first-seen order."""
    counts: dict[str, int] = {}
    unknown: list[str] = []
    seen_unknown: set[str] = set()
    for api in apis:
        intent = catalog.lookup(api)
        if intent is None:
            if api.lower() not in seen_unknown:
                seen_unknown.add(api.lower())
                unknown.append(api)
            continue
        counts[intent] = counts.get(intent, 0) + 1
    return IntentReport(counts=counts, unknown=tuple(unknown))


def read_predictions(source: str | Path | IO[str]) -> list[PredictionRecord]:
    if hasattr(source, "read"):
        lines = source.read().split("\n")  # type: ignore[union-attr]
    else:
        lines = Path(source).read_text(encoding="utf-8").split("\n")
    records: list[PredictionRecord] = []
    for index, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvalError(f"prediction record {index}: bad JSON ({exc})") from None
        try:
            records.append(
                PredictionRecord(
                    truth=str(obj["truth"]),
                    topk=tuple((str(n), float(s)) for n, s in obj["topk"]),
                    param_count=int(obj["param_count"]),
                    variant=str(obj.get("variant", "normal")),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EvalError(f"prediction record {index}: {exc}") from None
    return records


def read_embeddings(source: str | Path | IO[str]) -> dict[str, list[float]]:
    if hasattr(source, "read"):
        lines = source.read().split("\n")  # type: ignore[union-attr]
    else:
        lines = Path(source).read_text(encoding="utf-8").split("\n")
    out: dict[str, list[float]] = {}
    for index, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out[str(obj["api"])] = [float(x) for x in obj["vec"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise EvalError(f"embedding record {index}: {exc}") from None
    return out


def render_table(report: EvalReport) -> str:
    """Human-readable accuracy table, one row per parameter-count bucket."""
    lines = []
    header = f"{'params':>8} {'samples':>9} {'correct':>9} {'accuracy':>9} {'apis':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        lines.append(
            f"{row.bucket:>8} {row.samples:>9} {row.correct:>9} "
            f"{format_percent(row.correct, row.samples):>9} {row.unique_apis:>6}"
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'total':>8} {report.total:>9} {report.correct:>9} "
        f"{format_percent(report.correct, report.total):>9} {report.unique_correct:>6}"
    )
    lines.append(f"macro-average accuracy: {report.macro_mean:.4f}")
    if report.context_aware is not None:
        lines.append(f"context-aware accuracy: {report.context_aware:.4f}")
    if report.intents:
        parts = ", ".join(f"{k}={v}" for k, v in sorted(report.intents.items()))
        lines.append(f"intents: {parts}")
    return "\n".join(lines)
