"""Disassembly listing model: parse and render RDL text, API catalogs, call targets.

RDL is a line-oriented text format for annotated x86 disassembly:

    FUNCTION name
    401000: push 6 ; lpType
    401003: call FindResourceA
    END

Instruction lines are ``hexaddr: mnemonic operand, operand ; annotation`` with
the operand list and annotation both optional.  Blank lines and ``#`` comments
are allowed between functions only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Closed 32-bit x86 register set.  Anything else is a symbol, not a register.
REGISTERS_32 = ("eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp")
REGISTERS_16 = ("ax", "bx", "cx", "dx", "si", "di", "bp", "sp")
REGISTERS_8 = ("al", "ah", "bl", "bh", "cl", "ch", "dl", "dh")

# Aliasing map: every architectural name down to the 32-bit family head.
REGISTER_FAMILY: dict[str, str] = {}
for _wide, _narrow in zip(REGISTERS_32, REGISTERS_16):
    REGISTER_FAMILY[_wide] = _wide
    REGISTER_FAMILY[_narrow] = _wide
for _low in REGISTERS_8:
    REGISTER_FAMILY[_low] = "e" + _low[0] + "x"

REGISTERS = frozenset(REGISTER_FAMILY)

OPERAND_KINDS = ("register", "immediate", "hex", "mem", "symbol", "label")
SYMBOL_PREFIXES = ("dword_", "off_", "unk_", "sub_", "offset", "named")


class ListingError(ValueError):
    """Raised on malformed listing text.  Carries the 1-based source line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CatalogError(ValueError):
    pass


def register_family(name: str) -> str:
    return REGISTER_FAMILY[name.lower()]


@dataclass(frozen=True)
class Operand:
    """One instruction operand.

    kind is one of register, immediate, hex, mem, symbol, label.  hex values
    keep their significant digits (uppercase, no leading zeros, no trailing h)
    in ``raw``.  mem operands carry their sub-terms and the +/- sign of each;
    the first sign is always +1.  Symbols carry the prefix category that
    classified them.
    """

    kind: str
    register: str | None = None
    value: int | None = None
    raw: str | None = None
    terms: tuple["Operand", ...] = ()
    signs: tuple[int, ...] = ()
    name: str | None = None
    prefix: str | None = None

    def register_families(self) -> frozenset[str]:
        """Families of every register this operand mentions, incl. mem terms."""
        if self.kind == "register":
            return frozenset((REGISTER_FAMILY[self.register],))
        if self.kind == "mem":
            fams = [REGISTER_FAMILY[t.register] for t in self.terms if t.kind == "register"]
            return frozenset(fams)
        return frozenset()


@dataclass(frozen=True)
class Instruction:
    address: int
    mnemonic: str
    operands: tuple[Operand, ...] = ()
    annotation: str | None = None

    @property
    def is_call(self) -> bool:
        return self.mnemonic == "call"

    @property
    def is_push(self) -> bool:
        return self.mnemonic == "push"

    @property
    def is_annotated_push(self) -> bool:
        return self.mnemonic == "push" and self.annotation is not None

    def register_families(self) -> frozenset[str]:
        fams: set[str] = set()
        for op in self.operands:
            fams |= op.register_families()
        return frozenset(fams)


@dataclass(frozen=True)
class Function:
    name: str
    instructions: tuple[Instruction, ...] = ()

    @property
    def address_range(self) -> tuple[int, int] | None:
        if not self.instructions:
            return None
        return (self.instructions[0].address, self.instructions[-1].address)


@dataclass(frozen=True)
class Listing:
    source: str
    functions: tuple[Function, ...] = ()


_INSTR_RE = re.compile(r"^([0-9A-Fa-f]+):[ \t]+(.+)$")
_MNEMONIC_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*$")
_IMMEDIATE_RE = re.compile(r"^-?[0-9]+$")
_HEX_RE = re.compile(r"^0?([0-9A-Fa-f]+)[hH]$")
_SYMBOL_RE = re.compile(r"^[A-Za-z_$@?.][A-Za-z0-9_$@?.]*$")
_ANNOTATION_SPLIT_RE = re.compile(r"[ \t]+;[ \t]+")


def _parse_term(text: str, line: int | None) -> Operand:
    # Inside a memory expression only scalar terms are legal, no nesting.
    low = text.lower()
    if low in REGISTERS:
        return Operand(kind="register", register=low)
    if _IMMEDIATE_RE.match(text):
        return Operand(kind="immediate", value=int(text))
    m = _HEX_RE.match(text)
    if m:
        digits = m.group(1).upper().lstrip("0")
        return Operand(kind="hex", value=int(m.group(1), 16), raw=digits)
    if _SYMBOL_RE.match(text):
        return Operand(kind="symbol", name=text, prefix=_symbol_prefix(text))
    raise ListingError(f"cannot parse operand term {text!r}", line)


def _symbol_prefix(name: str) -> str:
    for prefix in ("dword_", "off_", "unk_", "sub_"):
        if name.startswith(prefix):
            return prefix
    return "named"


def parse_operand(text: str, line: int | None = None) -> Operand:
    """Parse one operand.  Ambiguity is resolved by priority: register,
    immediate, hex literal, memory expression, offset symbol, label, symbol."""
    text = text.strip()
    if not text:
        raise ListingError("empty operand", line)
    low = text.lower()
    if low in REGISTERS:
        return Operand(kind="register", register=low)
    if _IMMEDIATE_RE.match(text):
        return Operand(kind="immediate", value=int(text))
    m = _HEX_RE.match(text)
    if m:
        digits = m.group(1).upper().lstrip("0")
        return Operand(kind="hex", value=int(m.group(1), 16), raw=digits)
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            raise ListingError("empty memory expression", line)
        parts = re.split(r"([+-])", inner)
        terms = [_parse_term(parts[0].strip(), line)]
        signs = [1]
        for i in range(1, len(parts), 2):
            term_text = parts[i + 1].strip() if i + 1 < len(parts) else ""
            if not term_text:
                raise ListingError(f"dangling sign in memory expression {text!r}", line)
            signs.append(1 if parts[i] == "+" else -1)
            terms.append(_parse_term(term_text, line))
        return Operand(kind="mem", terms=tuple(terms), signs=tuple(signs))
    if low.startswith("offset ") or low.startswith("offset\t"):
        name = text.split(None, 1)[1].strip()
        if not _SYMBOL_RE.match(name):
            raise ListingError(f"bad offset symbol {name!r}", line)
        return Operand(kind="symbol", name=name, prefix="offset")
    if _SYMBOL_RE.match(text):
        if text.startswith("loc_"):
            return Operand(kind="label", name=text)
        return Operand(kind="symbol", name=text, prefix=_symbol_prefix(text))
    raise ListingError(f"cannot parse operand {text!r}", line)


def _parse_instruction(body: str, line: int) -> Instruction:
    m = _INSTR_RE.match(body)
    if not m:
        raise ListingError(f"expected 'hexaddr: mnemonic ...', got {body!r}", line)
    address = int(m.group(1), 16)
    rest = m.group(2)
    parts = _ANNOTATION_SPLIT_RE.split(rest, maxsplit=1)
    annotation = None
    if len(parts) == 2:
        annotation = parts[1].strip()
        if not annotation:
            raise ListingError("empty annotation", line)
    head = parts[0].strip()
    fields = head.split(None, 1)
    mnemonic = fields[0]
    if not _MNEMONIC_RE.match(mnemonic):
        raise ListingError(f"bad mnemonic {mnemonic!r}", line)
    operands: list[Operand] = []
    if len(fields) == 2:
        for chunk in fields[1].split(","):
            operands.append(parse_operand(chunk, line))
    return Instruction(
        address=address,
        mnemonic=mnemonic.lower(),
        operands=tuple(operands),
        annotation=annotation,
    )


def parse_listing(text: str, source: str = "<listing>") -> Listing:
    """Parse RDL text.  Raises ListingError with a line number on bad syntax,
    duplicate function names, non-increasing addresses, or overlapping
    function address ranges.  An input with no functions is an error."""
    functions: list[Function] = []
    seen_names: dict[str, int] = {}
    lines = text.split("\n")
    # A trailing newline terminates the last line, it is not an extra blank line.
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    while i < len(lines):
        line_no = i + 1
        stripped = lines[i].strip()
        if not stripped or stripped.startswith("#"):
            i += 1
            continue
        if not stripped.startswith("FUNCTION"):
            raise ListingError(f"expected FUNCTION header, got {stripped!r}", line_no)
        fields = stripped.split(None, 1)
        if len(fields) != 2 or not fields[1].strip():
            raise ListingError("FUNCTION header requires a name", line_no)
        name = fields[1].strip()
        if name.lower() in seen_names:
            raise ListingError(
                f"duplicate function name {name!r} (first at line {seen_names[name.lower()]})",
                line_no,
            )
        seen_names[name.lower()] = line_no
        i += 1
        instructions: list[Instruction] = []
        closed = False
        while i < len(lines):
            body_line_no = i + 1
            body = lines[i].strip()
            if body == "END":
                closed = True
                i += 1
                break
            if not body:
                raise ListingError("blank line inside function body", body_line_no)
            instr = _parse_instruction(body, body_line_no)
            if instructions and instr.address <= instructions[-1].address:
                raise ListingError(
                    f"address {instr.address:x} does not increase (previous {instructions[-1].address:x})",
                    body_line_no,
                )
            instructions.append(instr)
            i += 1
        if not closed:
            raise ListingError(f"function {name!r} missing END", len(lines))
        functions.append(Function(name=name, instructions=tuple(instructions)))
    if not functions:
        raise ListingError("listing contains no functions", max(1, len(lines)))
    _check_overlap(functions)
    return Listing(source=source, functions=tuple(functions))


def _check_overlap(functions: list[Function]) -> None:
    ranged = [(f.address_range, f.name) for f in functions if f.address_range]
    ranged.sort()
    for (r1, n1), (r2, n2) in zip(ranged, ranged[1:]):
        if r2[0] <= r1[1]:
            raise ListingError(
                f"functions {n1!r} and {n2!r} have overlapping address ranges"
            )


def render_operand(op: Operand) -> str:
    if op.kind == "register":
        return op.register
    if op.kind == "immediate":
        return str(op.value)
    if op.kind == "hex":
        digits = op.raw or "0"
        if digits[0] not in "0123456789":
            digits = "0" + digits
        return digits + "h"
    if op.kind == "mem":
        out = [render_operand(op.terms[0])]
        for sign, term in zip(op.signs[1:], op.terms[1:]):
            out.append("+" if sign > 0 else "-")
            out.append(render_operand(term))
        return "[" + "".join(out) + "]"
    if op.kind == "symbol":
        if op.prefix == "offset":
            return f"offset {op.name}"
        return op.name
    if op.kind == "label":
        return op.name
    raise ValueError(f"unknown operand kind {op.kind!r}")


def render_instruction(instr: Instruction) -> str:
    out = f"{instr.address:x}: {instr.mnemonic}"
    if instr.operands:
        out += " " + ", ".join(render_operand(op) for op in instr.operands)
    if instr.annotation is not None:
        out += f" ; {instr.annotation}"
    return out


def render_listing(listing: Listing) -> str:
    """Render to canonical RDL text: single spaces, lowercase mnemonics and
    registers, minimal lowercase addresses, one blank line between functions."""
    blocks = []
    for fn in listing.functions:
        lines = [f"FUNCTION {fn.name}"]
        lines.extend(render_instruction(instr) for instr in fn.instructions)
        lines.append("END")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


@dataclass(frozen=True)
class ApiEntry:
    name: str
    params: tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass
class ApiCatalog:
    """Known-API lookup table.  Lookups are case-insensitive."""

    _entries: dict[str, ApiEntry] = field(default_factory=dict)

    def lookup(self, name: str) -> ApiEntry | None:
        return self._entries.get(name.lower())

    def add(self, entry: ApiEntry) -> None:
        key = entry.name.lower()
        if key in self._entries:
            raise CatalogError(f"duplicate API name {entry.name!r}")
        self._entries[key] = entry

    def entries(self) -> tuple[ApiEntry, ...]:
        return tuple(self._entries.values())

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def load_api_catalog(text: str) -> ApiCatalog:
    """Load 'Name:param1,param2' lines.  '#' comments and blank lines are
    skipped.  A line with no colon, an empty name, an empty parameter name,
    or a duplicate API name (case-insensitive) is an error."""
    catalog = ApiCatalog()
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise CatalogError(f"line {line_no}: expected 'Name:params', got {line!r}")
        name, _, param_part = line.partition(":")
        name = name.strip()
        if not name:
            raise CatalogError(f"line {line_no}: empty API name")
        param_part = param_part.strip()
        params: tuple[str, ...] = ()
        if param_part:
            split = [p.strip() for p in param_part.split(",")]
            if any(not p for p in split):
                raise CatalogError(f"line {line_no}: empty parameter name in {line!r}")
            params = tuple(split)
        try:
            catalog.add(ApiEntry(name=name, params=params))
        except CatalogError as exc:
            raise CatalogError(f"line {line_no}: {exc}") from None
    return catalog


@dataclass(frozen=True)
class CallTarget:
    """Classification of a call instruction's target operand.

    kind 'known-api' carries the catalog entry; 'external-user-fn' is a named
    local or imported helper (sub_ prefix, plain name, offset symbol, or code
    label); 'indirect' covers register and memory targets plus dword_/off_/
    unk_ symbols and bare numeric targets.
    """

    kind: str
    api: ApiEntry | None = None
    operand: Operand | None = None


def classify_call_target(op: Operand, catalog: ApiCatalog) -> CallTarget:
    """Total classification: every grammar-legal operand gets a kind.
    Catalog membership is checked first, so an imported name wins over
    prefix rules."""
    if op.kind == "symbol":
        entry = catalog.lookup(op.name)
        if entry is not None:
            return CallTarget(kind="known-api", api=entry, operand=op)
        if op.prefix in ("dword_", "off_", "unk_"):
            return CallTarget(kind="indirect", operand=op)
        return CallTarget(kind="external-user-fn", operand=op)
    if op.kind == "label":
        return CallTarget(kind="external-user-fn", operand=op)
    # Registers, memory expressions, and raw numeric targets all resolve at
    # run time only.
    return CallTarget(kind="indirect", operand=op)
