"""Reference reimplementation of parameter backtracking, used only by tests.

Written independently of the production pass so the two can cross-check:
index-based walk, address lists instead of instruction dicts, and a snapshot
of the tracked-family set after every step for monotonicity assertions.
"""

from rinser.listing import REGISTER_FAMILY


def families_of(inst):
    fams = []
    for op in inst.operands:
        if op.kind == "register":
            fams.append(REGISTER_FAMILY[op.register])
        elif op.kind == "mem":
            for term in op.terms:
                if term.kind == "register":
                    fams.append(REGISTER_FAMILY[term.register])
    return fams


def is_external_call(inst):
    if inst.mnemonic != "call" or len(inst.operands) != 1:
        return False
    op = inst.operands[0]
    if op.kind == "label":
        return True
    return op.kind == "symbol" and op.prefix in ("sub_", "named", "offset")


def reference_backtrack(param_value, window, push):
    """Returns (sorted context addresses, tracked families, snapshots).

    snapshots[i] is the tracked set after examining the i-th instruction of
    the reverse walk; snapshots[0] is the seed set.
    """
    if param_value.kind != "register":
        return [push.address], set(), []
    tracked = {REGISTER_FAMILY[param_value.register]}
    chosen = [push.address]
    snapshots = [set(tracked)]
    idx = len(window) - 1
    while idx >= 0:
        inst = window[idx]
        idx -= 1
        if inst.address == push.address:
            continue
        if inst.mnemonic == "call":
            if is_external_call(inst):
                chosen.append(inst.address)
            snapshots.append(set(tracked))
            continue
        fams = families_of(inst)
        hit = False
        for fam in fams:
            if fam in tracked:
                hit = True
                break
        if hit and inst.address not in chosen:
            chosen.append(inst.address)
            for fam in fams:
                tracked.add(fam)
        snapshots.append(set(tracked))
    return sorted(set(chosen)), tracked, snapshots


def inclusion_is_sound(param_value, window, push, context_addresses):
    """Replay the reverse walk and check every included non-call instruction
    intersected the tracked set at its own step (external calls are included
    unconditionally, the push is the seed)."""
    if param_value.kind != "register":
        return list(context_addresses) == [push.address]
    tracked = {REGISTER_FAMILY[param_value.register]}
    chosen = set(context_addresses)
    for inst in reversed(window):
        if inst.address == push.address:
            continue
        if inst.mnemonic == "call":
            if is_external_call(inst) != (inst.address in chosen):
                return False
            continue
        fams = families_of(inst)
        hit = any(fam in tracked for fam in fams)
        if (inst.address in chosen) != hit:
            return False
        if hit:
            tracked.update(fams)
    return True
