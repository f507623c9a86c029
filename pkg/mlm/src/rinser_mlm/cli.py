"""Command-line engine: pretrain or fine-tune on a corpus file, predict
masked APIs, and export name embeddings.

JSONL artifacts are written atomically and summaries print as one JSON line
on stdout.  Exit codes: 0 success, 1 usage, 2 bad input, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
from io import StringIO
from pathlib import Path

from .data import EngineError, read_corpus
from .infer import read_param_counts, write_embeddings, write_predictions
from .model import PRESETS, ModelConfig
from .training import Checkpoint, evaluate_loss, finetune, pretrain

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    EngineError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    UnicodeDecodeError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise _UsageError(message)


def _atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summary(payload: dict) -> int:
    print(json.dumps(payload, separators=(",", ":")))
    return EXIT_OK


def _config_from(args: argparse.Namespace) -> ModelConfig:
    base = PRESETS[args.preset]
    overrides = {}
    for name in ("steps", "lr", "seed", "batch_size", "max_len", "schedule"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "bert_masking", False):
        overrides["bert_masking"] = True
    return dataclasses.replace(base, **overrides)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--max-len", dest="max_len", type=int)
    parser.add_argument("--schedule", choices=("cosine", "constant"))
    parser.add_argument("--bert-masking", dest="bert_masking", action="store_true")


def _cmd_pretrain(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    config = _config_from(args)
    ckpt = pretrain(corpus, config, vocab_size=args.vocab_size)
    ckpt.save(args.out)
    final = ckpt.log[-1]["loss"] if ckpt.log else None
    return _summary(
        {
            "command": "pretrain",
            "examples": len(corpus),
            "vocab": len(ckpt.tokenizer),
            "steps": config.steps,
            "final_loss": final,
            "out": str(args.out),
        }
    )


def _cmd_finetune(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    corpus = read_corpus(args.corpus)
    base = ckpt.config
    overrides = {}
    for name in ("steps", "lr", "seed", "batch_size", "schedule"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.bert_masking:
        overrides["bert_masking"] = True
    config = dataclasses.replace(base, **overrides)
    tuned = finetune(ckpt, corpus, config)
    tuned.save(args.out)
    final = tuned.log[-1]["loss"] if tuned.log else None
    return _summary(
        {
            "command": "finetune",
            "examples": len(corpus),
            "steps": config.steps,
            "final_loss": final,
            "out": str(args.out),
        }
    )


def _cmd_fill_mask(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    corpus = read_corpus(args.corpus)
    counts = read_param_counts(args.param_counts) if args.param_counts else None
    buffer = StringIO()
    written = write_predictions(ckpt, corpus, buffer, k=args.k, param_counts=counts)
    _atomic_write_text(args.out, buffer.getvalue())
    return _summary(
        {
            "command": "fill-mask",
            "predictions": written,
            "k": args.k,
            "out": str(args.out),
        }
    )


def _cmd_embed(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    names: list[str] = list(args.api or [])
    if args.apis_file:
        for line in Path(args.apis_file).read_text(encoding="utf-8").split("\n"):
            line = line.strip()
            if line and not line.startswith("#"):
                names.append(line)
    if not names:
        raise _UsageError("embed requires --api or --apis-file")
    buffer = StringIO()
    write_embeddings(ckpt, names, buffer)
    _atomic_write_text(args.out, buffer.getvalue())
    return _summary({"command": "embed", "apis": len(names), "out": str(args.out)})


def _cmd_loss(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    corpus = read_corpus(args.corpus)
    loss = evaluate_loss(ckpt, corpus)
    return _summary({"command": "loss", "examples": len(corpus), "loss": loss})


def _build_parser() -> _Parser:
    parser = _Parser(prog="rinser-mlm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train from scratch on a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=2048)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="continue training from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--schedule", choices=("cosine", "constant"))
    p.add_argument("--bert-masking", dest="bert_masking", action="store_true")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("fill-mask", help="predict masked tokens for a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--param-counts", dest="param_counts")
    p.set_defaults(func=_cmd_fill_mask)

    p = sub.add_parser("embed", help="export API-name embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--api", action="append")
    p.add_argument("--apis-file", dest="apis_file")
    p.add_argument("--out", required=True, help="embeddings JSONL")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("loss", help="mean masked loss of a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=_cmd_loss)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
