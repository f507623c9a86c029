"""Pretraining, fine-tuning, and checkpoint plumbing.

A masked word expands to one mask slot per subword piece and the loss is
averaged over masked slots only.  Sequences longer than the model's limit
are truncated, never rejected; targets that fall off the end are dropped.
Checkpoints bundle tokenizer + config + weights + step log and load without
the training corpus.
"""

from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import EngineError, Example
from .model import MaskedLM, ModelConfig, build_model, learning_rate
from .tokenizer import CLS, MASK, PAD, TokenizerModel, build_tokenizer

IGNORE = -100


def encode_example(
    tokenizer: TokenizerModel, example: Example, max_len: int
) -> tuple[list[int], list[int]]:
    """([CLS] + subword ids, per-slot targets).  Masked words contribute one
    [MASK] slot per piece, each targeting its own piece id."""
    cls_id = tokenizer.piece_id(CLS)
    mask_id = tokenizer.piece_id(MASK)
    masked = set(example.mask_positions)
    ids = [cls_id]
    targets = [IGNORE]
    for index, word in enumerate(example.tokens):
        piece_ids = tokenizer.encode_word_ids(word)
        if index in masked:
            ids.extend(mask_id for _ in piece_ids)
            targets.extend(piece_ids)
        else:
            ids.extend(piece_ids)
            targets.extend(IGNORE for _ in piece_ids)
    return ids[:max_len], targets[:max_len]


def _corrupt(ids: list[int], targets: list[int], vocab: int, rng: random.Random) -> list[int]:
    """Optional 80/10/10 treatment of mask slots: keep the mask, substitute a
    random piece, or restore the original piece (targets unchanged)."""
    out = list(ids)
    for slot, target in enumerate(targets):
        if target == IGNORE:
            continue
        roll = rng.random()
        if roll < 0.8:
            continue
        out[slot] = rng.randrange(vocab) if roll < 0.9 else target
    return out


def _pad_batch(
    rows: list[tuple[list[int], list[int]]], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    width = max(len(ids) for ids, _ in rows)
    ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    targets = torch.full((len(rows), width), IGNORE, dtype=torch.long)
    pad_mask = torch.zeros((len(rows), width), dtype=torch.bool)
    for row, (seq, tgt) in enumerate(rows):
        ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        targets[row, : len(tgt)] = torch.tensor(tgt, dtype=torch.long)
        pad_mask[row, : len(seq)] = True
    return ids, targets, pad_mask


def _encode_corpus(
    tokenizer: TokenizerModel, corpus: list[Example], max_len: int
) -> list[tuple[list[int], list[int]]]:
    if not corpus:
        raise EngineError("corpus is empty")
    encoded = []
    for example in corpus:
        ids, targets = encode_example(tokenizer, example, max_len)
        if any(t != IGNORE for t in targets):
            encoded.append((ids, targets))
    if not encoded:
        raise EngineError("no masked positions survive truncation")
    return encoded


def _batch_loss(
    model: MaskedLM, ids: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor
) -> torch.Tensor:
    logits, _ = model(ids, pad_mask)
    return torch.nn.functional.cross_entropy(
        logits.reshape(-1, model.vocab_size), targets.reshape(-1), ignore_index=IGNORE
    )


@dataclass
class Checkpoint:
    tokenizer: TokenizerModel
    config: ModelConfig
    state: dict[str, torch.Tensor]
    log: list[dict] = field(default_factory=list)
    _model: MaskedLM | None = field(default=None, repr=False, compare=False)

    def model(self) -> MaskedLM:
        """Inference model, built once and cached, eval mode."""
        if self._model is None:
            built = MaskedLM(self.config, len(self.tokenizer))
            built.load_state_dict(self.state)
            built.eval()
            self._model = built
        return self._model

    def save(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        (root / "config.json").write_text(
            json.dumps(dataclasses.asdict(self.config), indent=2, sort_keys=True),
            encoding="utf-8",
        )
        (root / "tokenizer.json").write_text(self.tokenizer.to_json(), encoding="utf-8")
        (root / "log.json").write_text(json.dumps(self.log, indent=2), encoding="utf-8")
        torch.save(self.state, root / "weights.pt")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        root = Path(path)
        for name in ("config.json", "tokenizer.json", "weights.pt", "log.json"):
            if not (root / name).is_file():
                raise EngineError(f"checkpoint is missing {name}")
        try:
            config = ModelConfig(**json.loads((root / "config.json").read_text()))
            log = json.loads((root / "log.json").read_text())
        except (json.JSONDecodeError, TypeError) as exc:
            raise EngineError(f"bad checkpoint metadata: {exc}") from None
        tokenizer = TokenizerModel.from_json((root / "tokenizer.json").read_text())
        state = torch.load(root / "weights.pt", weights_only=True)
        return cls(tokenizer=tokenizer, config=config, state=state, log=list(log))


def _train(
    model: MaskedLM,
    tokenizer: TokenizerModel,
    corpus: list[Example],
    config: ModelConfig,
    log: list[dict],
    phase: str,
) -> None:
    encoded = _encode_corpus(tokenizer, corpus, config.max_len)
    pad_id = tokenizer.piece_id(PAD)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = random.Random(config.seed)
    model.train()
    order: list[int] = []
    for step in range(config.steps):
        if len(order) < config.batch_size:
            refill = list(range(len(encoded)))
            rng.shuffle(refill)
            order.extend(refill)
        picks = [encoded[i] for i in order[: config.batch_size]]
        del order[: config.batch_size]
        if config.bert_masking:
            picks = [
                (_corrupt(ids, targets, len(tokenizer), rng), targets)
                for ids, targets in picks
            ]
        ids, targets, pad_mask = _pad_batch(picks, pad_id)
        lr = learning_rate(config, step)
        for group in optimizer.param_groups:
            group["lr"] = lr
        loss = _batch_loss(model, ids, targets, pad_mask)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        log.append(
            {"phase": phase, "step": step, "loss": float(loss.detach()), "lr": lr}
        )


def pretrain(
    corpus: list[Example],
    config: ModelConfig,
    vocab_size: int = 2048,
    tokenizer: TokenizerModel | None = None,
) -> Checkpoint:
    """Train from random initialization.  Zero steps returns the seeded
    initialization untouched."""
    if tokenizer is None:
        tokenizer = build_tokenizer(corpus, vocab_size)
    model = build_model(config, len(tokenizer))
    log: list[dict] = []
    _train(model, tokenizer, corpus, config, log, phase="pretrain")
    return Checkpoint(tokenizer=tokenizer, config=config, state=model.state_dict(), log=log)


def finetune(ckpt: Checkpoint, corpus: list[Example], config: ModelConfig) -> Checkpoint:
    """Continue training from a checkpoint on another corpus (the stripped
    variant, typically).  The tokenizer is reused, never relearned."""
    if config.architecture() != ckpt.config.architecture():
        raise EngineError(
            f"config architecture {config.architecture()} does not match "
            f"checkpoint {ckpt.config.architecture()}"
        )
    model = MaskedLM(config, len(ckpt.tokenizer))
    model.load_state_dict(ckpt.state)
    log = list(ckpt.log)
    _train(model, ckpt.tokenizer, corpus, config, log, phase="finetune")
    return Checkpoint(
        tokenizer=ckpt.tokenizer, config=config, state=model.state_dict(), log=log
    )


def evaluate_loss(ckpt: Checkpoint, corpus: list[Example]) -> float:
    """Mean cross-entropy over every masked slot in the corpus."""
    tokenizer = ckpt.tokenizer
    encoded = _encode_corpus(tokenizer, corpus, ckpt.config.max_len)
    pad_id = tokenizer.piece_id(PAD)
    model = ckpt.model()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(encoded), ckpt.config.batch_size):
            rows = encoded[start : start + ckpt.config.batch_size]
            ids, targets, pad_mask = _pad_batch(rows, pad_id)
            logits, _ = model(ids, pad_mask)
            flat = targets.reshape(-1)
            keep = flat != IGNORE
            losses = torch.nn.functional.cross_entropy(
                logits.reshape(-1, model.vocab_size)[keep], flat[keep], reduction="sum"
            )
            total += float(losses)
            count += int(keep.sum())
    return total / count


def gradient_check(
    corpus: list[Example],
    config: ModelConfig,
    vocab_size: int = 2048,
    samples: int = 24,
    eps: float = 1e-5,
    batch_limit: int = 8,
) -> float:
    """Finite-difference check of the masked loss at initialization.

    Central differences in float64 against autograd on sampled weight
    coordinates; returns the worst relative error."""
    tokenizer = build_tokenizer(corpus, vocab_size)
    encoded = _encode_corpus(tokenizer, corpus, config.max_len)[:batch_limit]
    ids, targets, pad_mask = _pad_batch(encoded, tokenizer.piece_id(PAD))
    model = build_model(config, len(tokenizer)).double()
    model.zero_grad()
    loss = _batch_loss(model, ids, targets, pad_mask)
    loss.backward()
    rng = random.Random(config.seed)
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    worst = 0.0
    with torch.no_grad():
        for _ in range(samples):
            name, param = named[rng.randrange(len(named))]
            index = rng.randrange(param.numel())
            flat = param.reshape(-1)
            original = float(flat[index])
            flat[index] = original + eps
            upper = float(_batch_loss(model, ids, targets, pad_mask))
            flat[index] = original - eps
            lower = float(_batch_loss(model, ids, targets, pad_mask))
            flat[index] = original
            fd = (upper - lower) / (2 * eps)
            analytic = float(param.grad.reshape(-1)[index])
            scale = max(abs(fd), abs(analytic), 1e-8)
            worst = max(worst, abs(fd - analytic) / scale)
    return worst
