"""Fill-mask prediction and API-name embeddings.

fill_mask ranks the whole vocabulary at the first masked slot of an example;
embed mean-pools final hidden states over a name's subword pieces.  Both run
in eval mode with gradients off, so repeated calls are bitwise identical.
Outputs serialize to the evaluator's predictions / embeddings JSONL formats.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path

import torch

from .data import EngineError, Example
from .tokenizer import CLS, MASK, UNK
from .training import Checkpoint, encode_example

_KEEP = set(string.ascii_lowercase) | set(string.digits)


def clean_name(name: str) -> str:
    """API names normalize to lowercase alphanumerics, matching the corpus
    builder's token cleanup."""
    return "".join(ch for ch in name.lower() if ch in _KEEP)


def _first_mask_slot(ids: list[int], mask_id: int) -> int:
    for slot, piece in enumerate(ids):
        if piece == mask_id:
            return slot
    raise EngineError("mask position fell outside the model's sequence length")


def fill_mask(
    ckpt: Checkpoint, example: Example, k: int = 5
) -> list[tuple[str, float]]:
    """Top-k (piece, probability) at the example's first masked slot,
    probabilities non-increasing.  k beyond the vocabulary returns the full
    ranking."""
    if not example.mask_positions:
        raise EngineError("example has no mask positions")
    if k < 1:
        raise EngineError("k must be positive")
    tokenizer = ckpt.tokenizer
    ids, _ = encode_example(tokenizer, example, ckpt.config.max_len)
    slot = _first_mask_slot(ids, tokenizer.piece_id(MASK))
    model = ckpt.model()
    with torch.no_grad():
        batch = torch.tensor([ids], dtype=torch.long)
        pad_mask = torch.ones_like(batch, dtype=torch.bool)
        logits, _ = model(batch, pad_mask)
        probs = torch.softmax(logits[0, slot], dim=-1)
        k = min(k, len(tokenizer))
        top = torch.topk(probs, k)
    return [
        (tokenizer.pieces[int(i)], float(p)) for p, i in zip(top.values, top.indices)
    ]


@dataclass(frozen=True)
class ApiEmbedding:
    api: str
    vector: tuple[float, ...]
    # True when the name is not a single vocabulary entry and had to be
    # composed from subword pieces.
    composed: bool


def embed(ckpt: Checkpoint, api_name: str) -> ApiEmbedding:
    """Mean of final hidden states over the name's pieces, deterministic."""
    tokenizer = ckpt.tokenizer
    token = clean_name(api_name)
    if not token:
        raise EngineError(f"API name {api_name!r} cleans to an empty token")
    pieces = tokenizer.encode_word(token)
    composed = len(pieces) > 1 or pieces[0] in (UNK,) or token not in tokenizer.atomic
    ids = [tokenizer.piece_id(CLS)] + [tokenizer.piece_id(p) for p in pieces]
    ids = ids[: ckpt.config.max_len]
    model = ckpt.model()
    with torch.no_grad():
        batch = torch.tensor([ids], dtype=torch.long)
        pad_mask = torch.ones_like(batch, dtype=torch.bool)
        _, hidden = model(batch, pad_mask)
        vector = hidden[0, 1:].mean(dim=0)
    return ApiEmbedding(
        api=api_name, vector=tuple(float(x) for x in vector), composed=composed
    )


def read_param_counts(source: str | Path) -> dict[str, int]:
    """Argument counts from 'Name:param,param' catalog lines, keyed by the
    cleaned name so prediction tokens join directly."""
    counts: dict[str, int] = {}
    for line_no, raw in enumerate(Path(source).read_text(encoding="utf-8").split("\n"), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise EngineError(f"param-counts line {line_no}: expected 'Name:params'")
        name, _, params = line.partition(":")
        if not name.strip():
            raise EngineError(f"param-counts line {line_no}: empty name")
        listed = [p for p in (p.strip() for p in params.split(",")) if p]
        counts[clean_name(name)] = len(listed)
    return counts


def write_predictions(
    ckpt: Checkpoint,
    corpus: list[Example],
    out,
    k: int = 5,
    param_counts: dict[str, int] | None = None,
) -> int:
    """One evaluator-format line per example: truth is the first mask label,
    topk comes from fill_mask.  Returns the number of lines written."""
    counts = param_counts or {}
    written = 0
    for example in corpus:
        if not example.mask_positions:
            continue
        truth = example.mask_labels[0]
        topk = fill_mask(ckpt, example, k)
        record = {
            "truth": truth,
            "topk": [[name, prob] for name, prob in topk],
            "param_count": counts.get(truth, 0),
            "variant": example.variant,
        }
        out.write(json.dumps(record, separators=(",", ":")) + "\n")
        written += 1
    return written


def write_embeddings(ckpt: Checkpoint, api_names: list[str], out) -> int:
    for name in api_names:
        emb = embed(ckpt, name)
        record = {
            "api": emb.api,
            "vec": list(emb.vector),
            "composed": emb.composed,
        }
        out.write(json.dumps(record, separators=(",", ":")) + "\n")
    return len(api_names)
