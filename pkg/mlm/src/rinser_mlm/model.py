"""Transformer encoder for masked-token prediction.

Pre-norm residual blocks with explicit multi-head attention; the output
head is tied to the input token embedding, so prediction and representation
share one vector per vocabulary entry.  All computation is CPU float32 and
deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .data import EngineError

SCHEDULES = ("cosine", "constant")


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    hidden: int
    heads: int
    ffn: int
    max_len: int = 64
    mask_rate: float = 0.15
    lr: float = 5e-4
    schedule: str = "cosine"
    batch_size: int = 64
    steps: int = 400
    seed: int = 0
    # Optional 80/10/10 corruption of mask slots (mask/random/keep).
    bert_masking: bool = False

    def __post_init__(self) -> None:
        if min(self.layers, self.hidden, self.heads, self.ffn, self.max_len) < 1:
            raise EngineError("layers, hidden, heads, ffn, max_len must be positive")
        if self.hidden % self.heads != 0:
            raise EngineError(
                f"hidden {self.hidden} is not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.mask_rate < 1.0:
            raise EngineError("mask_rate must be in [0, 1)")
        if self.lr <= 0:
            raise EngineError("lr must be positive")
        if self.schedule not in SCHEDULES:
            raise EngineError(f"schedule must be one of {SCHEDULES}")
        if self.batch_size < 1 or self.steps < 0:
            raise EngineError("batch_size must be positive and steps non-negative")

    def architecture(self) -> tuple:
        """The fields that must match for a weight file to load."""
        return (self.layers, self.hidden, self.heads, self.ffn, self.max_len)


# Desk-scale preset: trains in minutes on one CPU core.
DESK = ModelConfig(layers=2, hidden=128, heads=4, ffn=512)

# Full-scale reference configuration, recorded for completeness; training it
# needs a GPU cluster and a corpus far beyond the bundled fixtures.
REFERENCE = ModelConfig(
    layers=12,
    hidden=768,
    heads=12,
    ffn=3072,
    max_len=512,
    lr=2e-5,
    schedule="cosine",
    batch_size=256,
    steps=28000,
)

PRESETS = {"desk": DESK, "reference": REFERENCE}


class Block(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        hidden = config.hidden
        self.heads = config.heads
        self.norm1 = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.up = nn.Linear(hidden, config.ffn)
        self.down = nn.Linear(config.ffn, hidden)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        # x: (batch, seq, hidden); pad_mask: (batch, seq) True where real.
        batch, seq, hidden = x.shape
        head_dim = hidden // self.heads
        y = self.norm1(x)
        q, k, v = self.qkv(y).chunk(3, dim=-1)
        shape = (batch, seq, self.heads, head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(head_dim)
        blocked = ~pad_mask[:, None, None, :]
        scores = scores.masked_fill(blocked, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        mixed = (att @ v).transpose(1, 2).reshape(batch, seq, hidden)
        x = x + self.proj(mixed)
        z = self.norm2(x)
        x = x + self.down(torch.nn.functional.gelu(self.up(z)))
        return x


class MaskedLM(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int) -> None:
        super().__init__()
        if vocab_size < 1:
            raise EngineError("vocab_size must be positive")
        self.config = config
        self.vocab_size = vocab_size
        self.tok = nn.Embedding(vocab_size, config.hidden)
        self.pos = nn.Embedding(config.max_len, config.hidden)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.layers))
        self.final_norm = nn.LayerNorm(config.hidden)
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)

    def forward(
        self, ids: torch.Tensor, pad_mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits over vocab, final hidden states)."""
        seq = ids.shape[1]
        if seq > self.config.max_len:
            raise EngineError(
                f"sequence length {seq} exceeds max_len {self.config.max_len}"
            )
        positions = torch.arange(seq, device=ids.device)
        x = self.tok(ids) + self.pos(positions)[None, :, :]
        for block in self.blocks:
            x = block(x, pad_mask)
        hidden = self.final_norm(x)
        logits = hidden @ self.tok.weight.T + self.out_bias
        return logits, hidden


def build_model(config: ModelConfig, vocab_size: int) -> MaskedLM:
    """Seeded construction: identical config + vocab + seed gives bitwise
    identical initial weights."""
    torch.manual_seed(config.seed)
    model = MaskedLM(config, vocab_size)
    model.train()
    return model


def learning_rate(config: ModelConfig, step: int) -> float:
    """lr for a 0-based step; cosine decays to zero at config.steps."""
    if config.schedule == "constant" or config.steps == 0:
        return config.lr
    progress = min(max(step, 0), config.steps) / config.steps
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))
