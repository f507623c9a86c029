"""Command-line pipeline: parse listings, extract codeprints, emit corpora
and the reference database, strip or transform listings, and score
predictions.

Every subcommand prints a one-line JSON summary on stdout and writes file
artifacts atomically, so re-running with identical inputs and seed produces
byte-identical outputs.  Exit codes: 0 success, 1 usage, 2 bad input,
3 internal error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .corpus import (
    CorpusError,
    build_example,
    example_to_json,
    build_refdb,
    emit_refdb,
    validate_refdb,
    CORPUS_SCHEMA,
)
from .evaluate import (
    EvalError,
    EvalReport,
    EvalRow,
    build_context_groups,
    load_intent_catalog,
    read_embeddings,
    read_predictions,
    render_table,
    score_context_aware,
    score_exact,
    tag_intents,
)
from .extractor import (
    ApiCodeprint,
    ObfuscatedCallsite,
    detect_obfuscated_callsites,
    extract_codeprints,
)
from .listing import (
    CatalogError,
    Listing,
    ListingError,
    load_api_catalog,
    parse_listing,
    render_instruction,
    render_listing,
    render_operand,
)
from .normalize import normalize_codeprint
from .transform import TransformError, TransformPlan, apply_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_INPUT_ERRORS = (
    ListingError,
    CatalogError,
    CorpusError,
    EvalError,
    TransformError,
    FileNotFoundError,
    IsADirectoryError,
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


@dataclass
class _Config:
    values: dict

    @classmethod
    def load(cls, path: str | None) -> "_Config":
        if path is None:
            return cls(values={})
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls(values={k.replace("-", "_"): v for k, v in raw.items()})

    def resolve(self, args: argparse.Namespace, name: str, default):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in self.values:
            return self.values[name]
        return default


def _load_catalog_file(path: str):
    return load_api_catalog(Path(path).read_text(encoding="utf-8"))


def _parse_file(path: str) -> Listing:
    return parse_listing(Path(path).read_text(encoding="utf-8"), source=path)


def _param_json(pc) -> dict:
    return {
        "name": pc.param_name,
        "value": render_operand(pc.param_value),
        "context": [render_instruction(i) for i in pc.context],
    }


def _codeprint_json(cp: ApiCodeprint, listing_id: str) -> dict:
    return {
        "listing": listing_id,
        "function": cp.function_name,
        "callsite": cp.callsite_address,
        "api": cp.api_name,
        "params": [_param_json(p) for p in cp.params],
    }


def _obfuscated_json(oc: ObfuscatedCallsite, listing_id: str) -> dict:
    return {
        "listing": listing_id,
        "function": oc.function_name,
        "callsite": oc.callsite_address,
        "api": None,
        "target": render_operand(oc.target),
        "params": [_param_json(p) for p in oc.params],
    }


def _extract_one(job: tuple[str, str, bool]) -> tuple[list[dict], int, int]:
    path, catalog_text, want_obfuscated = job
    catalog = load_api_catalog(catalog_text)
    listing = _parse_file(path)
    rows: list[dict] = []
    n_cp = 0
    n_obf = 0
    for fn in listing.functions:
        for cp in extract_codeprints(fn, catalog):
            rows.append(_codeprint_json(cp, path))
            n_cp += 1
        if want_obfuscated:
            for oc in detect_obfuscated_callsites(fn, catalog):
                rows.append(_obfuscated_json(oc, path))
                n_obf += 1
    return rows, n_cp, n_obf


def _map_jobs(worker: Callable, jobs: list, workers: int) -> Iterable:
    if workers <= 1 or len(jobs) <= 1:
        return map(worker, jobs)
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def _summary(payload: dict) -> int:
    print(json.dumps(payload, separators=(",", ":")))
    return EXIT_OK


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    workers = int(cfg.resolve(args, "workers", 1))
    catalog_path = cfg.resolve(args, "catalog", None)
    out = cfg.resolve(args, "out", None)
    if not catalog_path or not out:
        raise _UsageError("extract requires --catalog and --out")
    catalog_text = Path(catalog_path).read_text(encoding="utf-8")
    load_api_catalog(catalog_text)  # validate before any work
    jobs = [(p, catalog_text, args.obfuscated) for p in args.inputs]
    lines: list[str] = []
    total_cp = total_obf = 0
    for rows, n_cp, n_obf in _map_jobs(_extract_one, jobs, workers):
        lines.extend(json.dumps(r, separators=(",", ":")) for r in rows)
        total_cp += n_cp
        total_obf += n_obf
    _atomic_write_text(out, "".join(line + "\n" for line in lines))
    return _summary(
        {
            "command": "extract",
            "inputs": len(args.inputs),
            "codeprints": total_cp,
            "obfuscated": total_obf,
            "out": str(out),
        }
    )


def _corpus_one(job: tuple[str, str, str, str, float, int, int]) -> tuple[list[str], int, int]:
    path, catalog_text, variant, mode, mask_rate, seed, max_tokens = job
    catalog = load_api_catalog(catalog_text)
    listing = _parse_file(path)
    lines: list[str] = []
    kept = filtered = 0
    for fn in listing.functions:
        for cp in extract_codeprints(fn, catalog):
            ncp = normalize_codeprint(cp, variant)
            ex = build_example(ncp, mode, mask_rate, seed, max_tokens, listing_id=path)
            if ex is None:
                filtered += 1
                continue
            kept += 1
            lines.append(example_to_json(ex))
    return lines, kept, filtered


def _cmd_corpus(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    workers = int(cfg.resolve(args, "workers", 1))
    catalog_path = cfg.resolve(args, "catalog", None)
    out = cfg.resolve(args, "out", None)
    if not catalog_path or not out:
        raise _UsageError("corpus requires --catalog and --out")
    variant = cfg.resolve(args, "variant", "normal")
    mode = cfg.resolve(args, "mode", "pretrain-random")
    mask_rate = float(cfg.resolve(args, "mask_rate", 0.15))
    seed = int(cfg.resolve(args, "seed", 0))
    max_tokens = int(cfg.resolve(args, "max_tokens", 512))
    catalog_text = Path(catalog_path).read_text(encoding="utf-8")
    load_api_catalog(catalog_text)
    jobs = [
        (p, catalog_text, variant, mode, mask_rate, seed, max_tokens)
        for p in args.inputs
    ]
    header = json.dumps({"schema": CORPUS_SCHEMA}, separators=(",", ":"))
    lines = [header]
    kept = filtered = 0
    for file_lines, n_kept, n_filtered in _map_jobs(_corpus_one, jobs, workers):
        lines.extend(file_lines)
        kept += n_kept
        filtered += n_filtered
    _atomic_write_text(out, "".join(line + "\n" for line in lines))
    return _summary(
        {
            "command": "corpus",
            "inputs": len(args.inputs),
            "variant": variant,
            "mode": mode,
            "examples": kept,
            "filtered_zero_param": filtered,
            "out": str(out),
        }
    )


def _refdb_one(job: tuple[str, str]) -> list[ApiCodeprint]:
    path, catalog_text = job
    catalog = load_api_catalog(catalog_text)
    listing = _parse_file(path)
    out: list[ApiCodeprint] = []
    for fn in listing.functions:
        out.extend(extract_codeprints(fn, catalog))
    return out


def _cmd_refdb(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    workers = int(cfg.resolve(args, "workers", 1))
    catalog_path = cfg.resolve(args, "catalog", None)
    out = cfg.resolve(args, "out", None)
    if not catalog_path or not out:
        raise _UsageError("refdb requires --catalog and --out")
    catalog_text = Path(catalog_path).read_text(encoding="utf-8")
    catalog = load_api_catalog(catalog_text)
    jobs = [(p, catalog_text) for p in args.inputs]
    cps: list[ApiCodeprint] = []
    for batch in _map_jobs(_refdb_one, jobs, workers):
        cps.extend(batch)
    db = build_refdb(cps)
    import io

    buf = io.StringIO()
    emit_refdb(db, buf)
    _atomic_write_text(out, buf.getvalue())
    validation = validate_refdb(db, catalog)
    return _summary(
        {
            "command": "refdb",
            "inputs": len(args.inputs),
            "apis": len(db.entries),
            "observations": sum(e.observations for e in db.entries.values()),
            "summary": db.summary(),
            "validation": {
                "checked": validation.checked,
                "count_accuracy": validation.count_accuracy,
                "name_accuracy": validation.name_accuracy,
                "missing": list(validation.missing),
            },
            "out": str(out),
        }
    )


def _cmd_strip(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    out = cfg.resolve(args, "out", None)
    if not out:
        raise _UsageError("strip requires --out")
    listing = _parse_file(args.input)
    from dataclasses import replace

    from .listing import Function

    functions = []
    for fn in listing.functions:
        instrs = tuple(replace(i, annotation=None) for i in fn.instructions)
        first = instrs[0].address if instrs else 0
        functions.append(Function(name=f"sub_{first:X}", instructions=instrs))
    stripped = Listing(source=listing.source, functions=tuple(functions))
    _atomic_write_text(out, render_listing(stripped))
    return _summary(
        {
            "command": "strip",
            "functions": len(functions),
            "out": str(out),
        }
    )


def _cmd_transform(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    out = cfg.resolve(args, "out", None)
    if not out:
        raise _UsageError("transform requires --out")
    seed = int(cfg.resolve(args, "seed", 0))
    kinds_raw = cfg.resolve(args, "kinds", None)
    if not kinds_raw:
        raise _UsageError("transform requires --kinds")
    kinds = frozenset(k.strip() for k in str(kinds_raw).split(",") if k.strip())
    swap = None
    if args.swap:
        parts = [s.strip() for s in args.swap.split(",")]
        if len(parts) != 2:
            raise _UsageError("--swap takes two registers, e.g. eax,ebx")
        swap = (parts[0], parts[1])
    plan = TransformPlan(seed=seed, kinds=kinds, register_swap=swap)
    listing = _parse_file(args.input)
    transformed = apply_plan(listing, plan)
    _atomic_write_text(out, render_listing(transformed))
    if args.log:
        _atomic_write_text(
            args.log, json.dumps(plan.log, indent=2, sort_keys=True) + "\n"
        )
    return _summary(
        {
            "command": "transform",
            "kinds": sorted(kinds),
            "seed": seed,
            "edits": len(plan.log),
            "out": str(out),
        }
    )


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _Config.load(args.config)
    threshold = float(cfg.resolve(args, "threshold", 0.91))
    records = read_predictions(args.predictions)
    report = score_exact(records)
    if args.embeddings:
        groups = build_context_groups(read_embeddings(args.embeddings), threshold)
        report.context_aware = score_context_aware(records, groups)
    if args.intents:
        intent_catalog = load_intent_catalog(
            Path(args.intents).read_text(encoding="utf-8")
        )
        tagged = tag_intents((r.top1 for r in records), intent_catalog)
        report.intents = tagged.counts
        report.intents_unknown = tagged.unknown
    out = cfg.resolve(args, "out", None)
    if out:
        _atomic_write_text(
            out, json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )
    summary = {
        "command": "eval",
        "records": report.total,
        "accuracy": report.accuracy,
        "macro_mean": report.macro_mean,
    }
    if report.context_aware is not None:
        summary["context_aware"] = report.context_aware
    if out:
        summary["out"] = str(out)
    return _summary(summary)


def _report_from_dict(data: dict) -> EvalReport:
    rows = tuple(
        EvalRow(
            bucket=r["params"],
            samples=int(r["samples"]),
            correct=int(r["correct"]),
            unique_apis=int(r["unique_apis"]),
        )
        for r in data["rows"]
    )
    return EvalReport(
        total=int(data["total"]),
        correct=int(data["correct"]),
        rows=rows,
        per_api={
            api: (int(v["samples"]), int(v["correct"]))
            for api, v in data.get("per_api", {}).items()
        },
        unique_correct=int(data.get("unique_correct", 0)),
        aw_pair_misses=int(data.get("aw_pair_misses", 0)),
        macro_mean=float(data.get("macro_mean", 0.0)),
        context_aware=data.get("context_aware"),
        intents=data.get("intents", {}),
        intents_unknown=tuple(data.get("intents_unknown", ())),
    )


def _cmd_report(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        report = _report_from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise EvalError(f"bad report file: {exc}") from None
    print(render_table(report))
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="rinser", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="TOML config file; flags win over it")

    p = sub.add_parser("extract", help="extract codeprints to JSONL")
    common(p)
    p.add_argument("inputs", nargs="+", help="listing files")
    p.add_argument("--catalog", help="API catalog file")
    p.add_argument("--out", help="output JSONL path")
    p.add_argument("--obfuscated", action="store_true",
                   help="also emit indirect callsites")
    p.add_argument("--workers", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("corpus", help="emit a masked token corpus")
    common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--catalog")
    p.add_argument("--out")
    p.add_argument("--variant", choices=["normal", "stripped", "values-only"])
    p.add_argument("--mode", choices=["pretrain-random", "api-mask"])
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_corpus)

    p = sub.add_parser("refdb", help="build the API reference database")
    common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--catalog")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_refdb)

    p = sub.add_parser("strip", help="remove annotations and function names")
    common(p)
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_strip)

    p = sub.add_parser("transform", help="apply seeded listing transformations")
    common(p)
    p.add_argument("input")
    p.add_argument("--kinds", help="comma list: " + ",".join(
        ("instr-substitution", "register-reassignment",
         "instr-reordering", "displacement")))
    p.add_argument("--seed", type=int)
    p.add_argument("--swap", help="explicit register pair, e.g. ebx,ecx")
    p.add_argument("--out")
    p.add_argument("--log", help="write the edit log JSON here")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("eval", help="score a predictions file")
    common(p)
    p.add_argument("predictions")
    p.add_argument("--embeddings", help="embeddings JSONL for context groups")
    p.add_argument("--threshold", type=float, help="cosine threshold (default 0.91)")
    p.add_argument("--intents", help="intent catalog for capability tagging")
    p.add_argument("--out", help="write the full report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render a report JSON as a table")
    common(p)
    p.add_argument("report")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 3
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
