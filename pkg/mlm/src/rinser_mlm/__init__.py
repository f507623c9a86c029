"""Desk-scale masked language model over API-codeprint corpora."""

from .data import CORPUS_SCHEMA, EngineError, Example, read_corpus
from .infer import (
    ApiEmbedding,
    clean_name,
    embed,
    fill_mask,
    read_param_counts,
    write_embeddings,
    write_predictions,
)
from .model import (
    DESK,
    PRESETS,
    REFERENCE,
    MaskedLM,
    ModelConfig,
    build_model,
    learning_rate,
)
from .tokenizer import (
    CLS,
    MASK,
    PAD,
    SPECIALS,
    SYMBOL_TOKENS,
    UNK,
    TokenizerModel,
    build_tokenizer,
    load_tokenizer,
)
from .training import (
    Checkpoint,
    encode_example,
    evaluate_loss,
    finetune,
    gradient_check,
    pretrain,
)

__all__ = [
    "ApiEmbedding",
    "CLS",
    "CORPUS_SCHEMA",
    "Checkpoint",
    "DESK",
    "EngineError",
    "Example",
    "MASK",
    "MaskedLM",
    "ModelConfig",
    "PAD",
    "PRESETS",
    "REFERENCE",
    "SPECIALS",
    "SYMBOL_TOKENS",
    "TokenizerModel",
    "UNK",
    "build_model",
    "build_tokenizer",
    "clean_name",
    "embed",
    "encode_example",
    "evaluate_loss",
    "fill_mask",
    "finetune",
    "gradient_check",
    "learning_rate",
    "load_tokenizer",
    "pretrain",
    "read_corpus",
    "read_param_counts",
    "write_embeddings",
    "write_predictions",
]
