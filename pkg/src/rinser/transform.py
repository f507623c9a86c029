"""Semantics-preserving listing transformations used to stress extraction.

Four in-place randomization edits (instruction substitution, whole-function
register reassignment, adjacent-pair reordering, and prologue/epilogue
push/pop reordering) plus code displacement, which replaces an instruction
run with a jmp to a relocated copy appended after the body.  All choices are
seeded per function, so a (seed, function) pair always yields the same
output.  Call instructions and their operands are never altered.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable

from .listing import (
    REGISTERS_16,
    REGISTERS_32,
    Function,
    Instruction,
    Listing,
    Operand,
    register_family,
    render_instruction,
)

TRANSFORM_KINDS = (
    "instr-substitution",
    "register-reassignment",
    "instr-reordering",
    "displacement",
)

# Registers safe to reassign; esp/ebp anchor the stack frame and never move.
_SWAPPABLE = ("eax", "ebx", "ecx", "edx", "esi", "edi")
_HAS_8BIT = ("eax", "ebx", "ecx", "edx")
_CALLEE_SAVED = ("ebx", "esi", "edi")

_WIDE_TO_NARROW = dict(zip(REGISTERS_32, REGISTERS_16))


class TransformError(ValueError):
    pass


@dataclass
class TransformPlan:
    seed: int
    kinds: frozenset[str]
    register_swap: tuple[str, str] | None = None
    displace_run: tuple[int, int] | None = None  # (start index, length)
    log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.kinds = frozenset(self.kinds)
        if not self.kinds:
            raise TransformError("plan needs at least one transformation kind")
        unknown = self.kinds - set(TRANSFORM_KINDS)
        if unknown:
            raise TransformError(f"unknown transformation kinds {sorted(unknown)}")

    def note(self, kind: str, function: str, **details) -> None:
        self.log.append({"kind": kind, "function": function, **details})


def _rng(plan: TransformPlan, fn: Function, stage: str) -> random.Random:
    return random.Random(f"{plan.seed}:{fn.name}:{stage}")


# ---------------------------------------------------------------- effects

def _effects(inst: Instruction) -> tuple[frozenset[str], frozenset[str], bool]:
    """(defs, uses, touches_memory) over register families plus 'eflags'.
    Unknown mnemonics get maximally conservative effects."""
    ops = inst.operands

    def fams(*indices: int) -> set[str]:
        out: set[str] = set()
        for i in indices:
            if i < len(ops):
                out |= ops[i].register_families()
        return out

    def dst_reg() -> set[str]:
        if ops and ops[0].kind == "register":
            return {register_family(ops[0].register)}
        return set()

    m = inst.mnemonic
    any_mem = any(op.kind == "mem" for op in ops)
    if m in ("mov", "movzx", "movsx"):
        uses = fams(1)
        if ops and ops[0].kind == "mem":
            uses |= ops[0].register_families()  # address registers are read
        return frozenset(dst_reg()), frozenset(uses), any_mem
    if m == "lea":
        # Address computation only; the bracketed operand is not a load.
        return frozenset(dst_reg()), frozenset(fams(1)), False
    if m in ("add", "sub", "adc", "sbb", "and", "or", "xor",
             "shl", "shr", "sar", "rol", "ror", "imul"):
        return frozenset(dst_reg() | {"eflags"}), frozenset(fams(0, 1)), any_mem
    if m in ("inc", "dec", "neg", "not"):
        return frozenset(dst_reg() | {"eflags"}), frozenset(fams(0)), any_mem
    if m in ("cmp", "test"):
        return frozenset({"eflags"}), frozenset(fams(0, 1)), any_mem
    if m == "push":
        return frozenset({"esp"}), frozenset(fams(0) | {"esp"}), True
    if m == "pop":
        return frozenset(dst_reg() | {"esp"}), frozenset({"esp"}), True
    if m == "xchg":
        both = fams(0, 1)
        return frozenset(both), frozenset(both), any_mem
    if m in ("nop", "label"):
        return frozenset(), frozenset(), False
    all_fams = fams(*range(len(ops)))
    return frozenset(all_fams | {"eflags"}), frozenset(all_fams | {"eflags"}), True


def _depends(a: Instruction, b: Instruction) -> bool:
    defs_a, uses_a, mem_a = _effects(a)
    defs_b, uses_b, mem_b = _effects(b)
    if mem_a and mem_b:
        return True
    return bool(defs_a & (uses_b | defs_b)) or bool(uses_a & defs_b)


def _reorderable(inst: Instruction) -> bool:
    return inst.mnemonic not in ("call", "jmp", "ret", "label")


# ------------------------------------------------------------ substitution

def _substitute(inst: Instruction) -> Instruction | None:
    """sub r,k <-> add r,-k over decimal immediates."""
    if inst.mnemonic not in ("sub", "add") or len(inst.operands) != 2:
        return None
    dst, src = inst.operands
    if dst.kind != "register" or src.kind != "immediate":
        return None
    flipped = "add" if inst.mnemonic == "sub" else "sub"
    return replace(
        inst,
        mnemonic=flipped,
        operands=(dst, Operand(kind="immediate", value=-src.value)),
    )


# ------------------------------------------------------ register reassign

def _swap_rename_map(a: str, b: str, used: set[str]) -> dict[str, str]:
    """Name-level rename table for swapping families a and b.  Raises when a
    used sub-register has no counterpart in the other family."""
    for reg in (a, b):
        if reg in ("esp", "ebp"):
            raise TransformError(f"refusing to reassign stack register {reg!r}")
        if reg not in _SWAPPABLE:
            raise TransformError(f"{reg!r} is not a reassignable 32-bit register")
    if a == b:
        raise TransformError("register swap needs two distinct registers")
    rename = {a: b, b: a}
    rename[_WIDE_TO_NARROW[a]] = _WIDE_TO_NARROW[b]
    rename[_WIDE_TO_NARROW[b]] = _WIDE_TO_NARROW[a]
    both_8bit = a in _HAS_8BIT and b in _HAS_8BIT
    if both_8bit:
        for suffix in ("l", "h"):
            rename[a[1] + suffix] = b[1] + suffix
            rename[b[1] + suffix] = a[1] + suffix
    else:
        for name in used:
            if len(name) == 2 and name[1] in ("l", "h") and register_family(name) in (a, b):
                raise TransformError(
                    f"cannot swap {a}/{b}: 8-bit register {name!r} is in use"
                )
    return rename


def _used_register_names(fn: Function, include_calls: bool) -> set[str]:
    used: set[str] = set()
    for inst in fn.instructions:
        if inst.is_call and not include_calls:
            continue
        for op in inst.operands:
            if op.kind == "register":
                used.add(op.register)
            elif op.kind == "mem":
                used.update(t.register for t in op.terms if t.kind == "register")
    return used


def _rename_operand(op: Operand, rename: dict[str, str]) -> Operand:
    if op.kind == "register" and op.register in rename:
        return replace(op, register=rename[op.register])
    if op.kind == "mem":
        new_terms = tuple(_rename_operand(t, rename) for t in op.terms)
        if new_terms != op.terms:
            return replace(op, terms=new_terms)
    return op


def _pick_swap_pair(fn: Function, rng: random.Random) -> tuple[str, str] | None:
    # Families touched by call instructions stay put: calls are never edited,
    # so renaming such a family elsewhere would redirect the call.
    call_families: set[str] = set()
    for inst in fn.instructions:
        if inst.is_call:
            call_families |= inst.register_families()
    used = _used_register_names(fn, include_calls=False)
    used_families = {register_family(n) for n in used}
    candidates = [
        f for f in _SWAPPABLE
        if f in used_families and f not in call_families
    ]
    pairs = []
    for i, a in enumerate(candidates):
        for b in candidates[i + 1:]:
            try:
                _swap_rename_map(a, b, used)
            except TransformError:
                continue
            pairs.append((a, b))
    if not pairs:
        return None
    return rng.choice(pairs)


# ------------------------------------------------------------- reordering

def _swap_contents(a: Instruction, b: Instruction) -> tuple[Instruction, Instruction]:
    # Addresses stay in place; everything else trades slots.
    return (
        replace(b, address=a.address),
        replace(a, address=b.address),
    )


def _reorder_saved_registers(
    instrs: list[Instruction], rng: random.Random
) -> tuple[list[Instruction], list[int] | None]:
    """Permute the prologue run of callee-saved pushes and mirror the
    epilogue pops.  Purely syntactic: the runs must be adjacent, unannotated,
    and exact mirrors of each other."""
    start = 0
    n = len(instrs)
    if (
        n >= 2
        and instrs[0].mnemonic == "push"
        and instrs[0].operands
        and instrs[0].operands[0].kind == "register"
        and instrs[0].operands[0].register == "ebp"
        and instrs[1].mnemonic == "mov"
    ):
        start = 2
    saves = []
    i = start
    while i < n:
        inst = instrs[i]
        if (
            inst.mnemonic == "push"
            and inst.annotation is None
            and len(inst.operands) == 1
            and inst.operands[0].kind == "register"
            and inst.operands[0].register in _CALLEE_SAVED
        ):
            saves.append(i)
            i += 1
        else:
            break
    if len(saves) < 2:
        return instrs, None
    end = n - 1
    if end >= 0 and instrs[end].mnemonic == "ret":
        end -= 1
    if (
        end >= 0
        and instrs[end].mnemonic == "pop"
        and instrs[end].operands
        and instrs[end].operands[0].kind == "register"
        and instrs[end].operands[0].register == "ebp"
    ):
        end -= 1
    pops = []
    j = end
    while j >= 0 and len(pops) < len(saves):
        inst = instrs[j]
        if (
            inst.mnemonic == "pop"
            and len(inst.operands) == 1
            and inst.operands[0].kind == "register"
        ):
            pops.append(j)
            j -= 1
        else:
            break
    if len(pops) != len(saves):
        return instrs, None
    save_regs = [instrs[i].operands[0].register for i in saves]
    pop_regs = [instrs[j].operands[0].register for j in pops]
    if save_regs != pop_regs:  # pops collected backwards, so equal means mirrored
        return instrs, None
    order = list(range(len(saves)))
    rng.shuffle(order)
    out = list(instrs)
    for slot, pick in zip(saves, order):
        out[slot] = replace(instrs[saves[pick]], address=instrs[slot].address)
    for slot, pick in zip(pops, order):
        out[slot] = replace(instrs[pops[pick]], address=instrs[slot].address)
    return out, order


def ipr_transform(fn: Function, plan: TransformPlan) -> Function:
    """Apply the in-place kinds the plan selects: substitution first, then
    register reassignment, then reordering (adjacent pairs and save-register
    runs).  Addresses never change; contents move between address slots."""
    instrs = list(fn.instructions)
    if "instr-substitution" in plan.kinds:
        for idx, inst in enumerate(instrs):
            flipped = _substitute(inst)
            if flipped is not None:
                plan.note(
                    "instr-substitution",
                    fn.name,
                    before=render_instruction(inst),
                    after=render_instruction(flipped),
                )
                instrs[idx] = flipped
    if "register-reassignment" in plan.kinds:
        used = _used_register_names(fn, include_calls=False)
        if plan.register_swap is not None:
            a, b = (r.lower() for r in plan.register_swap)
            rename = _swap_rename_map(a, b, used)
            pair = (a, b)
        else:
            pair = _pick_swap_pair(fn, _rng(plan, fn, "swap"))
            rename = _swap_rename_map(pair[0], pair[1], used) if pair else {}
        if pair is None:
            plan.note("register-reassignment", fn.name, skipped="no eligible pair")
        else:
            for idx, inst in enumerate(instrs):
                if inst.is_call:
                    continue
                new_ops = tuple(_rename_operand(op, rename) for op in inst.operands)
                if new_ops != inst.operands:
                    instrs[idx] = replace(inst, operands=new_ops)
            plan.note("register-reassignment", fn.name, swap=list(pair))
    if "instr-reordering" in plan.kinds:
        rng = _rng(plan, fn, "reorder")
        instrs, order = _reorder_saved_registers(instrs, rng)
        if order is not None:
            plan.note("save-reordering", fn.name, permutation=order)
        i = 0
        while i < len(instrs) - 1:
            a, b = instrs[i], instrs[i + 1]
            if (
                _reorderable(a)
                and _reorderable(b)
                and not _depends(a, b)
                and rng.random() < 0.5
            ):
                instrs[i], instrs[i + 1] = _swap_contents(a, b)
                plan.note(
                    "instr-reordering",
                    fn.name,
                    swapped=[render_instruction(a), render_instruction(b)],
                )
                i += 2
            else:
                i += 1
    return Function(name=fn.name, instructions=tuple(instrs))


# ------------------------------------------------------------ displacement

def _displaceable(inst: Instruction) -> bool:
    return inst.mnemonic not in ("call", "jmp", "label")


def _label_operand(name: str) -> Operand:
    return Operand(kind="label", name=name)


def _fresh_label_suffix(fn: Function) -> int:
    taken = set()
    for inst in fn.instructions:
        for op in inst.operands:
            if op.kind == "label":
                taken.add(op.name)
    n = 1
    while f"loc_disp_{n}" in taken or f"loc_cont_{n}" in taken:
        n += 1
    return n


def displace_code(fn: Function, plan: TransformPlan) -> Function:
    """Move a contiguous run of two or more plain instructions behind a jmp:
    the original site jumps out to the relocated run, which jumps back to a
    continuation label.  The run never includes the last instruction, so the
    jump back always has somewhere to land.  Addresses are renumbered
    monotonically afterwards."""
    body = list(fn.instructions)
    eligible: list[tuple[int, int]] = []  # (start, max length)
    for s in range(len(body) - 2):
        length = 0
        # The final instruction stays put: control must resume after the run.
        while s + length < len(body) - 1 and _displaceable(body[s + length]):
            length += 1
        if length >= 2:
            eligible.append((s, length))
    if plan.displace_run is not None:
        s, run_len = plan.displace_run
        limits = dict(eligible)
        if s not in limits or not 2 <= run_len <= limits[s]:
            raise TransformError(
                f"cannot displace run ({s}, {run_len}) in {fn.name!r}"
            )
    else:
        if not eligible:
            plan.note("displacement", fn.name, skipped="function too small")
            return fn
        rng = _rng(plan, fn, "displace")
        s, max_len = rng.choice(eligible)
        run_len = rng.randint(2, max_len)
    suffix = _fresh_label_suffix(fn)
    disp = f"loc_disp_{suffix}"
    cont = f"loc_cont_{suffix}"
    run = body[s:s + run_len]
    rebuilt = (
        body[:s]
        + [
            Instruction(address=0, mnemonic="jmp", operands=(_label_operand(disp),)),
            Instruction(address=0, mnemonic="label", operands=(_label_operand(cont),)),
        ]
        + body[s + run_len:]
        + [Instruction(address=0, mnemonic="label", operands=(_label_operand(disp),))]
        + run
        + [Instruction(address=0, mnemonic="jmp", operands=(_label_operand(cont),))]
    )
    base = body[0].address
    renumbered = tuple(
        replace(inst, address=base + 2 * i) for i, inst in enumerate(rebuilt)
    )
    plan.note(
        "displacement",
        fn.name,
        start=s,
        length=run_len,
        labels=[disp, cont],
    )
    return Function(name=fn.name, instructions=renumbered)


def apply_plan(listing: Listing, plan: TransformPlan) -> Listing:
    """Apply the plan's kinds to every function: in-place kinds first, then
    displacement."""
    out: list[Function] = []
    ipr_kinds = plan.kinds & {
        "instr-substitution", "register-reassignment", "instr-reordering"
    }
    for fn in listing.functions:
        if ipr_kinds:
            fn = ipr_transform(fn, plan)
        if "displacement" in plan.kinds:
            fn = displace_code(fn, plan)
        out.append(fn)
    return Listing(source=listing.source, functions=tuple(out))


def instruction_multiset(instructions: Iterable[Instruction]) -> list[str]:
    """Address-free rendering of non-jmp/label instructions, sorted; used to
    check displacement preserves the instruction multiset."""
    out = []
    for inst in instructions:
        if inst.mnemonic in ("jmp", "label"):
            continue
        rendered = render_instruction(inst)
        out.append(rendered.split(": ", 1)[1])
    return sorted(out)
