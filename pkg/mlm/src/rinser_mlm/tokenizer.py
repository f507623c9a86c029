"""Subword tokenizer with whole-token entries for API names and symbols.

The vocabulary is learned from corpus token streams by iterative pair
merging; continuation pieces carry a "##" prefix and encoding is greedy
longest-match.  Every API-name token seen in the corpus and every
symbolic-mapping token is injected as an atomic entry, so one mask slot can
name a whole API.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .data import EngineError, Example

PAD = "[PAD]"
MASK = "[MASK]"
UNK = "[UNK]"
CLS = "[CLS]"
SPECIALS = (PAD, MASK, UNK, CLS)

# Symbolic-mapping vocabulary: operand categories plus the register families
# they preserve.  These never split into subwords.
SYMBOL_TOKENS = (
    "mem", "complex", "saddr", "maddr", "laddr",
    "ptr", "runtime", "unknown", "extrfun",
    "eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp",
)


@dataclass(frozen=True)
class TokenizerModel:
    pieces: tuple[str, ...]
    atomic: frozenset[str]
    _ids: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.pieces)) != len(self.pieces):
            raise EngineError("duplicate vocabulary pieces")
        for special in SPECIALS:
            if special not in self.pieces:
                raise EngineError(f"vocabulary is missing special token {special!r}")
        self._ids.update({piece: i for i, piece in enumerate(self.pieces)})

    def __len__(self) -> int:
        return len(self.pieces)

    def piece_id(self, piece: str) -> int:
        try:
            return self._ids[piece]
        except KeyError:
            raise EngineError(f"piece {piece!r} is not in the vocabulary") from None

    def encode_word(self, word: str) -> list[str]:
        """Greedy longest-match subword split.  A word with no viable split
        becomes a single [UNK]."""
        if word in self._ids:
            return [word]
        out: list[str] = []
        start = 0
        while start < len(word):
            end = len(word)
            match = None
            while end > start:
                sub = word[start:end]
                if start > 0:
                    sub = "##" + sub
                if sub in self._ids:
                    match = sub
                    break
                end -= 1
            if match is None:
                return [UNK]
            out.append(match)
            start = end
        return out

    def encode_word_ids(self, word: str) -> list[int]:
        return [self._ids[piece] for piece in self.encode_word(word)]

    def to_json(self) -> str:
        obj = {"pieces": list(self.pieces), "atomic": sorted(self.atomic)}
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TokenizerModel":
        try:
            obj = json.loads(text)
            pieces = tuple(str(p) for p in obj["pieces"])
            atomic = frozenset(str(a) for a in obj["atomic"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise EngineError(f"bad tokenizer file: {exc}") from None
        return cls(pieces=pieces, atomic=atomic)


def _word_counts(corpus: list[Example]) -> Counter[str]:
    counts: Counter[str] = Counter()
    for example in corpus:
        counts.update(example.tokens)
    return counts


def _merge_step(splits: dict[str, list[str]], counts: Counter[str]) -> str | None:
    """One merge: fuse the most frequent adjacent piece pair (ties go to the
    lexicographically smallest pair).  Returns the new piece or None."""
    pairs: Counter[tuple[str, str]] = Counter()
    for word, pieces in splits.items():
        weight = counts[word]
        for a, b in zip(pieces, pieces[1:]):
            pairs[(a, b)] += weight
    if not pairs:
        return None
    best, best_count = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
    if best_count < 2:
        return None
    merged = best[0] + best[1].removeprefix("##")
    for word, pieces in splits.items():
        fused: list[str] = []
        i = 0
        while i < len(pieces):
            if i + 1 < len(pieces) and (pieces[i], pieces[i + 1]) == best:
                fused.append(merged)
                i += 2
            else:
                fused.append(pieces[i])
                i += 1
        splits[word] = fused
    return merged


def build_tokenizer(corpus: list[Example], vocab_size: int = 2048) -> TokenizerModel:
    """Learn a subword vocabulary from the corpus token streams.

    Atomic entries (API-name tokens and mapping symbols) are injected first;
    vocab_size is a cap on the total piece count."""
    atomic = set(SYMBOL_TOKENS)
    for example in corpus:
        if example.tokens:
            atomic.add(example.tokens[0])
    floor = len(SPECIALS) + len(atomic)
    if vocab_size < floor:
        raise EngineError(
            f"vocab_size {vocab_size} is smaller than atomic entries + specials ({floor})"
        )
    pieces: list[str] = list(SPECIALS) + sorted(atomic)
    seen = set(pieces)

    counts = _word_counts(corpus)
    splits = {
        word: [word[0]] + ["##" + ch for ch in word[1:]]
        for word in sorted(counts)
        if word not in atomic and word
    }
    for pieces_of in splits.values():
        for piece in pieces_of:
            if piece not in seen and len(pieces) < vocab_size:
                seen.add(piece)
                pieces.append(piece)
    while len(pieces) < vocab_size:
        merged = _merge_step(splits, counts)
        if merged is None:
            break
        if merged not in seen:
            seen.add(merged)
            pieces.append(merged)
    return TokenizerModel(pieces=tuple(pieces), atomic=frozenset(atomic))


def load_tokenizer(path: str | Path) -> TokenizerModel:
    return TokenizerModel.from_json(Path(path).read_text(encoding="utf-8"))
