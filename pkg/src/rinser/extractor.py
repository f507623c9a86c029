"""API codeprint extraction: parameter pushes, data-flow backtracking, and
indirect-callsite detection.

A codeprint is one known-API callsite plus, for each annotated parameter
push, the chain of instructions that fed the pushed value.  The chain is
found by a single reverse pass that tracks register families: start from
the pushed register, walk the accumulated window backwards, include any
instruction touching a tracked family, and widen the family set with the
other registers of each included instruction.  A register discovered late
cannot retroactively include instructions nearer the call; the pass is
deliberately not a fixpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .listing import (
    ApiCatalog,
    Function,
    Instruction,
    Operand,
    classify_call_target,
    register_family,
)


@dataclass(frozen=True)
class ParamContext:
    """One parameter of a callsite: its push, value, and related instructions.

    context holds the push plus every instruction the backtracker linked to
    the value, in program order.  tracked_registers is the final register
    family set of the pass (empty when the value is not a register).
    """

    param_name: str | None
    param_value: Operand
    push: Instruction
    context: tuple[Instruction, ...]
    tracked_registers: frozenset[str]


@dataclass(frozen=True)
class ApiCodeprint:
    api_name: str
    function_name: str
    callsite_address: int
    # Program order of the pushes, i.e. right-to-left argument order.
    params: tuple[ParamContext, ...]


@dataclass(frozen=True)
class ObfuscatedCallsite:
    function_name: str
    callsite_address: int
    target: Operand
    params: tuple[ParamContext, ...]


def _is_external_call(inst: Instruction) -> bool:
    # Inside an extraction window known-API calls never appear, so a call
    # qualifies as external by shape alone: a named symbol or code label.
    if not inst.is_call or len(inst.operands) != 1:
        return False
    op = inst.operands[0]
    if op.kind == "label":
        return True
    return op.kind == "symbol" and op.prefix in ("sub_", "named", "offset")


def backtrack_parameter(
    param_value: Operand,
    window: Sequence[Instruction],
    push: Instruction,
    param_name: str | None = None,
) -> ParamContext:
    """Reverse data-flow pass linking a pushed value to the instructions that
    produced it.

    window is the full accumulated instruction window of the callsite (it
    contains the push itself) and must hold no known-API calls.  When the
    pushed value is not a register the context is the push alone.
    """
    if param_value.kind != "register":
        return ParamContext(
            param_name=param_name,
            param_value=param_value,
            push=push,
            context=(push,),
            tracked_registers=frozenset(),
        )
    tracked: set[str] = {register_family(param_value.register)}
    included: dict[int, Instruction] = {push.address: push}
    for inst in reversed(window):
        if inst.address == push.address:
            continue
        if inst.is_call:
            if _is_external_call(inst):
                included[inst.address] = inst
            continue
        families = inst.register_families()
        if inst.address not in included and any(f in tracked for f in families):
            included[inst.address] = inst
            # The instruction is linked: its other registers now carry the
            # value's lineage too.
            tracked.update(families)
    context = tuple(sorted(included.values(), key=lambda i: i.address))
    return ParamContext(
        param_name=param_name,
        param_value=param_value,
        push=push,
        context=context,
        tracked_registers=frozenset(tracked),
    )


def _collect_annotated_pushes(
    window: list[Instruction],
    boundary: int,
    consumed: set[int],
    cap: int,
) -> list[Instruction]:
    """Walk the window backwards from the call down to the boundary left by
    the previous known-API call, taking at most cap unconsumed annotated
    pushes.  Unannotated pushes are skipped without side effects."""
    found: list[Instruction] = []
    for idx in range(len(window) - 1, boundary - 1, -1):
        if len(found) >= cap:
            break
        inst = window[idx]
        if (
            inst.is_annotated_push
            and len(inst.operands) == 1
            and inst.address not in consumed
        ):
            consumed.add(inst.address)
            found.append(inst)
    return found


def extract_codeprints(fn: Function, catalog: ApiCatalog) -> list[ApiCodeprint]:
    """Forward scan of one function: accumulate the instruction window, and at
    each known-API call collect up to arity annotated pushes, backtrack each,
    and emit a codeprint.  Known-API calls never enter the window; every
    other instruction does.  A push consumed by one callsite is not reused
    by a later one, and the scan never crosses the previous known-API call."""
    window: list[Instruction] = []
    consumed: set[int] = set()
    boundary = 0
    out: list[ApiCodeprint] = []
    for inst in fn.instructions:
        if inst.is_call and len(inst.operands) == 1:
            target = classify_call_target(inst.operands[0], catalog)
            if target.kind == "known-api":
                pushes = _collect_annotated_pushes(
                    window, boundary, consumed, target.api.arity
                )
                params = [
                    backtrack_parameter(
                        p.operands[0], window, p, p.annotation
                    )
                    for p in pushes
                ]
                params.sort(key=lambda pc: pc.push.address)
                out.append(
                    ApiCodeprint(
                        api_name=target.api.name,
                        function_name=fn.name,
                        callsite_address=inst.address,
                        params=tuple(params),
                    )
                )
                boundary = len(window)
                continue
        window.append(inst)
    return out


def _is_stack_directed_mov(inst: Instruction) -> bool:
    # A mov writing through esp/ebp places an argument on the stack; modern
    # compilers use this instead of push for some call sites.
    if inst.mnemonic != "mov" or not inst.operands:
        return False
    dst = inst.operands[0]
    if dst.kind != "mem":
        return False
    return bool(dst.register_families() & {"esp", "ebp"})


def _collect_all_pushes(
    window: list[Instruction], boundary: int, consumed: set[int]
) -> list[Instruction]:
    found: list[Instruction] = []
    for idx in range(len(window) - 1, boundary - 1, -1):
        inst = window[idx]
        if inst.is_push and len(inst.operands) == 1 and inst.address not in consumed:
            consumed.add(inst.address)
            found.append(inst)
    return found


def detect_obfuscated_callsites(
    fn: Function, catalog: ApiCatalog
) -> list[ObfuscatedCallsite]:
    """Find indirect calls (register, memory, numeric, or dword_/off_/unk_
    targets) that look like API invocations resolved at run time: the call
    must be preceded by at least one push or stack-directed mov somewhere in
    the function.  Parameters are every unconsumed push back to the previous
    known-API boundary, backtracked the same way as for named calls; no
    annotation is required and names are not recorded.  Known-API callsites
    consume their own pushes first so they are not misattributed here."""
    window: list[Instruction] = []
    consumed: set[int] = set()
    boundary = 0
    saw_push_or_stack_mov = False
    out: list[ObfuscatedCallsite] = []
    for inst in fn.instructions:
        if inst.is_call and len(inst.operands) == 1:
            target = classify_call_target(inst.operands[0], catalog)
            if target.kind == "known-api":
                _collect_annotated_pushes(window, boundary, consumed, target.api.arity)
                boundary = len(window)
                continue
            if target.kind == "indirect":
                if saw_push_or_stack_mov:
                    pushes = _collect_all_pushes(window, boundary, consumed)
                    params = [
                        backtrack_parameter(p.operands[0], window, p, None)
                        for p in pushes
                    ]
                    params.sort(key=lambda pc: pc.push.address)
                    out.append(
                        ObfuscatedCallsite(
                            function_name=fn.name,
                            callsite_address=inst.address,
                            target=inst.operands[0],
                            params=tuple(params),
                        )
                    )
                window.append(inst)
                continue
        if inst.is_push or _is_stack_directed_mov(inst):
            saw_push_or_stack_mov = True
        window.append(inst)
    return out
