"""Parser for the small straight-line program format the checker runs.

A script declares integer globals, then one section of operations per
thread. Sync partners are written explicitly on both sides, so a script
fully determines every channel. Example::

    GLOBAL x 1
    GLOBAL y 2
    THREAD 0
    RELSET 1:1,2:1      # broadcast release to thread 1 event 1 and thread 2 event 1
    ACQ 1 2             # acquire thread 1's 2nd sync event
    ACQ 2 2
    THREAD 1
    ACQ 0 1
    READ y r
    WRITE x r
    REL 0 2             # this REL is thread 1's sync event number 2

Operations: READ <cell> <local>, WRITE <cell> <expr>, ALLOC <local>,
REL <t> <n>, ACQ <t> <n>, RELSET <t:n,...>, ACQSET <t:n,...>.
A cell is a global name or a local bound by ALLOC. Expressions combine
integer literals and locals with + - *, max(a, b) and parentheses.
``#`` starts a comment. Thread sections must be numbered 0..n-1 in order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterator

from .errors import ScriptError
from .sync import SyncLabel

# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReadOp:
    cell: str
    into: str


@dataclass(frozen=True)
class WriteOp:
    cell: str
    expr: tuple


@dataclass(frozen=True)
class AllocOp:
    into: str


@dataclass(frozen=True)
class ReleaseOp:
    partners: tuple[SyncLabel, ...]  # acquire labels this release feeds


@dataclass(frozen=True)
class AcquireOp:
    partners: tuple[SyncLabel, ...]  # release labels this acquire drains


Op = ReadOp | WriteOp | AllocOp | ReleaseOp | AcquireOp


@dataclass(frozen=True)
class ScriptProgram:
    name: str
    globals: tuple[tuple[str, int], ...]
    threads: tuple[tuple[Op, ...], ...]

    @property
    def nthreads(self) -> int:
        return len(self.threads)

    def max_ops(self) -> int:
        return max((len(t) for t in self.threads), default=0)


# ----------------------------------------------------------------------
# expressions
# ----------------------------------------------------------------------


def _tokenize_expr(text: str) -> list[str]:
    out: list[str] = []
    cur = ""
    for ch in text:
        if ch.isalnum() or ch == "_":
            cur += ch
        else:
            if cur:
                out.append(cur)
                cur = ""
            if ch in "+-*(),":
                out.append(ch)
            elif not ch.isspace():
                raise ValueError(f"bad character {ch!r}")
    if cur:
        out.append(cur)
    return out


def _parse_expr(tokens: list[str]) -> tuple:
    pos = 0

    def peek() -> str | None:
        return tokens[pos] if pos < len(tokens) else None

    def take(expected: str | None = None) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        tok = tokens[pos]
        if expected is not None and tok != expected:
            raise ValueError(f"expected {expected!r}, got {tok!r}")
        pos += 1
        return tok

    def parse_sum() -> tuple:
        node = parse_product()
        while peek() in ("+", "-"):
            op = take()
            rhs = parse_product()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def parse_product() -> tuple:
        node = parse_atom()
        while peek() == "*":
            take()
            node = ("mul", node, parse_atom())
        return node

    def parse_atom() -> tuple:
        tok = take()
        if tok == "(":
            node = parse_sum()
            take(")")
            return node
        if tok == "max":
            take("(")
            a = parse_sum()
            take(",")
            b = parse_sum()
            take(")")
            return ("max", a, b)
        if tok.lstrip("-").isdigit():
            return ("const", int(tok))
        if tok.isidentifier():
            return ("local", tok)
        raise ValueError(f"bad token {tok!r}")

    node = parse_sum()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens {tokens[pos:]}")
    return node


def eval_expr(expr: tuple, locals_: dict[str, Any]) -> Any:
    kind = expr[0]
    if kind == "const":
        return expr[1]
    if kind == "local":
        return locals_[expr[1]]
    a = eval_expr(expr[1], locals_)
    b = eval_expr(expr[2], locals_)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "max":
        return max(a, b)
    raise ValueError(f"bad expr node {kind!r}")


def expr_locals(expr: tuple) -> Iterator[str]:
    if expr[0] == "local":
        yield expr[1]
    elif expr[0] not in ("const",):
        yield from expr_locals(expr[1])
        yield from expr_locals(expr[2])


# ----------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------


def _parse_label_list(text: str, line_no: int) -> tuple[SyncLabel, ...]:
    labels = []
    for part in text.split(","):
        part = part.strip()
        if ":" not in part:
            raise ScriptError(line_no, f"expected t:n, got {part!r}")
        t, _, n = part.partition(":")
        if not (t.strip().isdigit() and n.strip().isdigit()):
            raise ScriptError(line_no, f"expected integers in {part!r}")
        labels.append(SyncLabel(int(t), int(n)))
    return tuple(labels)


def parse_script(text: str, name: str = "<script>") -> ScriptProgram:
    globals_: list[tuple[str, int]] = []
    threads: list[list[Op]] = []
    current: list[Op] | None = None
    seen_globals: set[str] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        op = parts[0].upper()
        rest = parts[1] if len(parts) > 1 else ""

        if op == "GLOBAL":
            if current is not None:
                raise ScriptError(line_no, "GLOBAL must precede THREAD sections")
            fields = rest.split()
            if len(fields) != 2 or not fields[1].lstrip("-").isdigit():
                raise ScriptError(line_no, "usage: GLOBAL <name> <int>")
            gname = fields[0]
            if not gname.isidentifier():
                raise ScriptError(line_no, f"bad global name {gname!r}")
            if gname in seen_globals:
                raise ScriptError(line_no, f"duplicate global {gname!r}")
            seen_globals.add(gname)
            globals_.append((gname, int(fields[1])))
        elif op == "THREAD":
            if not rest.strip().isdigit() or int(rest) != len(threads):
                raise ScriptError(
                    line_no, f"THREAD sections must be numbered in order, got {rest!r}"
                )
            current = []
            threads.append(current)
        elif current is None:
            raise ScriptError(line_no, f"{op} before any THREAD section")
        elif op == "READ":
            fields = rest.split()
            if len(fields) != 2:
                raise ScriptError(line_no, "usage: READ <cell> <local>")
            current.append(ReadOp(fields[0], fields[1]))
        elif op == "WRITE":
            fields = rest.split(None, 1)
            if len(fields) != 2:
                raise ScriptError(line_no, "usage: WRITE <cell> <expr>")
            try:
                expr = _parse_expr(_tokenize_expr(fields[1]))
            except ValueError as err:
                raise ScriptError(line_no, f"bad expression: {err}") from None
            current.append(WriteOp(fields[0], expr))
        elif op == "ALLOC":
            fields = rest.split()
            if len(fields) != 1:
                raise ScriptError(line_no, "usage: ALLOC <local>")
            current.append(AllocOp(fields[0]))
        elif op in ("REL", "ACQ"):
            fields = rest.split()
            if len(fields) != 2 or not all(f.isdigit() for f in fields):
                raise ScriptError(line_no, f"usage: {op} <thread> <seq>")
            label = (SyncLabel(int(fields[0]), int(fields[1])),)
            current.append(ReleaseOp(label) if op == "REL" else AcquireOp(label))
        elif op in ("RELSET", "ACQSET"):
            labels = _parse_label_list(rest, line_no)
            current.append(
                ReleaseOp(labels) if op == "RELSET" else AcquireOp(labels)
            )
        else:
            raise ScriptError(line_no, f"unknown operation {op!r}")

    program = ScriptProgram(
        name=name,
        globals=tuple(globals_),
        threads=tuple(tuple(t) for t in threads),
    )
    _validate(program)
    return program


def _validate(program: ScriptProgram) -> None:
    if not program.threads:
        raise ScriptError(0, "script has no THREAD sections")
    global_names = {name for name, _ in program.globals}
    for tid, ops in enumerate(program.threads):
        # A local is either a plain value (bound by READ) or a cell handle
        # (bound by ALLOC); the two are not interchangeable.
        kinds: dict[str, str] = {}
        for op in ops:
            if isinstance(op, ReadOp):
                _check_cell(op.cell, global_names, kinds, tid)
                kinds[op.into] = "value"
            elif isinstance(op, AllocOp):
                kinds[op.into] = "cell"
            elif isinstance(op, WriteOp):
                _check_cell(op.cell, global_names, kinds, tid)
                for ref in expr_locals(op.expr):
                    if kinds.get(ref) != "value":
                        raise ScriptError(
                            0,
                            f"thread {tid} computes with {ref!r}, which is not "
                            "a value local",
                        )
            elif isinstance(op, (ReleaseOp, AcquireOp)):
                if len(set(op.partners)) != len(op.partners):
                    raise ScriptError(0, f"thread {tid} names duplicate partners")
                for label in op.partners:
                    if not 0 <= label.thread < program.nthreads:
                        raise ScriptError(
                            0,
                            f"thread {tid} names unknown thread {label.thread}",
                        )
                    if label.thread == tid:
                        raise ScriptError(0, f"thread {tid} syncs with itself")
                    if label.seq < 1:
                        raise ScriptError(0, f"bad partner seq {label.seq}")


def _check_cell(
    cell: str, global_names: set[str], kinds: dict[str, str], tid: int
) -> None:
    if cell in global_names:
        return
    if kinds.get(cell) != "cell":
        raise ScriptError(
            0,
            f"thread {tid} touches {cell!r}, which is neither a global nor an "
            "allocated cell",
        )
