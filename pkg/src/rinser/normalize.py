"""Symbolic mapping and text normalization of codeprints into token streams.

Raw operands are replaced by category symbols (mem, complex, saddr, maddr,
laddr, ptr, runtime ptr, unknown ptr, extrfun) so the vocabulary stays
bounded; decimal constants stay as-is because their values are meaningful
(flags, sizes).  The final cleanup lowercases everything and strips
punctuation and non-ASCII, so no bracket or plus sign ever reaches a corpus.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

from .extractor import ApiCodeprint
from .listing import Instruction, Operand

VARIANTS = ("normal", "stripped", "values-only")

_KEEP = set(string.ascii_lowercase) | set(string.digits)


def clean_token(token: str) -> str:
    """Lowercase and keep only ASCII letters and digits.  May return ''."""
    return "".join(ch for ch in token.lower() if ch in _KEEP)


def map_operand(op: Operand) -> list[str]:
    """Symbolic mapping of one operand to tokens.  Total over every kind."""
    if op.kind == "register":
        return [op.register]
    if op.kind == "immediate":
        return [str(op.value)]
    if op.kind == "hex":
        significant = len(op.raw or "")
        if significant <= 1:
            return ["saddr"]
        if significant <= 4:
            return ["maddr"]
        return ["laddr"]
    if op.kind == "mem":
        return ["mem"] if len(op.terms) <= 2 else ["complex"]
    if op.kind == "symbol":
        if op.prefix == "unk_":
            return ["unknown", "ptr"]
        if op.prefix in ("offset", "dword_"):
            return ["ptr"]
        if op.prefix == "off_":
            return ["runtime", "ptr"]
        if op.prefix == "sub_":
            return ["extrfun"]
        # Bare named symbols stand for a memory location.
        return ["mem"]
    if op.kind == "label":
        return ["ptr"]
    raise ValueError(f"unknown operand kind {op.kind!r}")


@dataclass(frozen=True)
class NormalizedCodeprint:
    """Token stream of one codeprint.  tokens excludes api_token; a codeprint
    whose API takes no parameters has an empty tokens tuple and is filtered
    before corpus emission."""

    api_token: str
    tokens: tuple[str, ...]
    variant: str
    function_name: str = ""
    callsite_address: int = 0

    def stream(self) -> tuple[str, ...]:
        return (self.api_token,) + self.tokens


def _instruction_tokens(inst: Instruction) -> list[str]:
    out = [inst.mnemonic]
    for op in inst.operands:
        out.extend(map_operand(op))
    return out


def normalize_codeprint(cp: ApiCodeprint, variant: str) -> NormalizedCodeprint:
    """Serialize a codeprint: api token, then per parameter (in push order)
    the name token (normal variant only) followed by the parameter's
    substance.  A register-valued parameter contributes its full context
    instructions; any other value contributes only its mapped value token.
    The values-only variant keeps just the mapped push-operand values."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    tokens: list[str] = []
    for param in cp.params:
        if not param.context:
            raise RuntimeError(
                f"parameter of {cp.api_name} at {cp.callsite_address:x} has an empty context"
            )
        if variant == "normal" and param.param_name is not None:
            name_token = clean_token(param.param_name)
            if name_token:
                tokens.append(name_token)
        if variant == "values-only":
            raw = map_operand(param.param_value)
        elif param.param_value.kind == "register":
            raw = []
            for inst in param.context:
                raw.extend(_instruction_tokens(inst))
        else:
            raw = map_operand(param.param_value)
        tokens.extend(t for t in (clean_token(r) for r in raw) if t)
    return NormalizedCodeprint(
        api_token=clean_token(cp.api_name),
        tokens=tuple(tokens),
        variant=variant,
        function_name=cp.function_name,
        callsite_address=cp.callsite_address,
    )
