"""Toy concurrent heap language: AST, parser, printer, and validation.

The language is line-oriented: one statement per line, blocks delimited by
braces, optional explicit label prefixes of the form ``L3:``.  Heap cells
hold a single value (scalar or address); structs are modeled as one
allocation per field.  Protocol-core interaction happens through the
primitive statements ``core_alloc`` and ``core_call``; everything else is
ordinary application code.

Grammar sketch::

    program   := header* stmt*
    header    := "input" NAME ["secret"] | "core_api" INT STRING
    stmt      := [LABEL ":"] form
    form      := "skip"
               | NAME ":=" "new()"
               | NAME ":=" "*" NAME
               | "*" NAME ":=" expr
               | NAME ":=" "core_alloc" "(" args ")"
               | rets ":=" "core_call" INT "on" NAME "(" args ")"
               | "core_call" INT "on" NAME "(" args ")"
               | NAME ":=" expr
               | "fork" "(" names ")" "{" ... "}"
               | "io" STRING "(" exprs ")" ["caps" "[" names "]"]
               | "if" expr "{" ... "}" ["else" "{" ... "}"]
               | "while" expr "{" ... "}"
               | "callback" STRING "{" ... "}"

Comments start with ``//``; lines starting with ``//@`` carry ghost
annotations and are ignored by the parser, which makes erasure of printed
instrumented programs purely textual.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class LangError(Exception):
    """Syntax or well-formedness error, with a source position when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Lit:
    # int | bool | str | None (None prints as nil)
    value: object


@dataclass(frozen=True)
class Unary:
    op: str  # "!"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * == != < <= and or
    left: "Expr"
    right: "Expr"


Expr = Var | Lit | Unary | Binary

NIL = Lit(None)


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Lit):
        return set()
    if isinstance(e, Unary):
        return free_vars(e.operand)
    return free_vars(e.left) | free_vars(e.right)


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


@dataclass
class Skip:
    label: str = ""


@dataclass
class HeapAlloc:
    x: str
    label: str = ""


@dataclass
class HeapRead:
    x: str
    src: str  # x := *src
    label: str = ""


@dataclass
class HeapWrite:
    target: str  # *target := value
    value: Expr = NIL
    label: str = ""


@dataclass
class Assign:
    x: str
    value: Expr = NIL
    label: str = ""


@dataclass
class CoreAlloc:
    c: str
    args: list[str] = field(default_factory=list)  # var names; "nil" allowed
    label: str = ""


@dataclass
class CoreCall:
    rets: list[str] = field(default_factory=list)
    api: int = 0
    recv: str = ""
    args: list[str] = field(default_factory=list)
    label: str = ""


@dataclass
class Fork:
    captured: list[str] = field(default_factory=list)
    body: list["Stmt"] = field(default_factory=list)
    label: str = ""


@dataclass
class IoCall:
    op: str = ""
    args: list[Expr] = field(default_factory=list)
    caps: list[str] = field(default_factory=list)
    label: str = ""


@dataclass
class Branch:
    cond: Expr = NIL
    then: list["Stmt"] = field(default_factory=list)
    orelse: list["Stmt"] = field(default_factory=list)
    label: str = ""


@dataclass
class Loop:
    cond: Expr = NIL
    body: list["Stmt"] = field(default_factory=list)
    label: str = ""


@dataclass
class Callback:
    name: str = ""
    body: list["Stmt"] = field(default_factory=list)
    label: str = ""


Stmt = (
    Skip
    | HeapAlloc
    | HeapRead
    | HeapWrite
    | Assign
    | CoreAlloc
    | CoreCall
    | Fork
    | IoCall
    | Branch
    | Loop
    | Callback
)


@dataclass
class InputDecl:
    name: str
    secret: bool = False


@dataclass
class Program:
    inputs: list[InputDecl] = field(default_factory=list)
    core_apis: dict[int, str] = field(default_factory=dict)
    body: list[Stmt] = field(default_factory=list)


def defined_var_names(s: Stmt) -> list[str]:
    """Variable names this statement defines (SSA definition sites)."""
    if isinstance(s, (HeapAlloc, HeapRead)):
        return [s.x]
    if isinstance(s, Assign):
        return [s.x]
    if isinstance(s, CoreAlloc):
        return [s.c]
    if isinstance(s, CoreCall):
        return list(s.rets)
    return []


def used_var_names(s: Stmt) -> set[str]:
    """Variable names this statement reads (not counting nested bodies)."""
    if isinstance(s, HeapRead):
        return {s.src}
    if isinstance(s, HeapWrite):
        return {s.target} | free_vars(s.value)
    if isinstance(s, Assign):
        return free_vars(s.value)
    if isinstance(s, CoreAlloc):
        return {a for a in s.args if a != "nil"}
    if isinstance(s, CoreCall):
        return {s.recv} | {a for a in s.args if a != "nil"}
    if isinstance(s, Fork):
        return set(s.captured)
    if isinstance(s, IoCall):
        out: set[str] = set()
        for e in s.args:
            out |= free_vars(e)
        return out
    if isinstance(s, (Branch, Loop)):
        return free_vars(s.cond)
    return set()


def walk(body: list[Stmt]):
    """Yield every statement in the block, depth-first, textual order."""
    for s in body:
        yield s
        if isinstance(s, Fork):
            yield from walk(s.body)
        elif isinstance(s, Branch):
            yield from walk(s.then)
            yield from walk(s.orelse)
        elif isinstance(s, (Loop, Callback)):
            yield from walk(s.body)


# ---------------------------------------------------------------------------
# Tokenizer / expression parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(==|!=|<=|\d+|\"[^\"]*\"|[A-Za-z_][A-Za-z0-9_]*|[()+\-*<!,])"
)

_KEYWORD_LITERALS = {"nil": None, "true": True, "false": False}


def _tokenize(text: str, line: int) -> list[str]:
    tokens: list[str] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise LangError(f"unexpected character {text[pos:].strip()[0]!r}", line)
        tokens.append(m.group(1))
        pos = m.end()
    return tokens


class _ExprParser:
    def __init__(self, tokens: list[str], line: int):
        self.tokens = tokens
        self.i = 0
        self.line = line

    def peek(self) -> str | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise LangError("unexpected end of expression", self.line)
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise LangError(f"expected {tok!r}, got {got!r}", self.line)

    def parse(self) -> Expr:
        e = self.or_expr()
        if self.peek() is not None:
            raise LangError(f"trailing tokens after expression: {self.peek()!r}", self.line)
        return e

    def or_expr(self) -> Expr:
        e = self.and_expr()
        while self.peek() == "or":
            self.next()
            e = Binary("or", e, self.and_expr())
        return e

    def and_expr(self) -> Expr:
        e = self.cmp_expr()
        while self.peek() == "and":
            self.next()
            e = Binary("and", e, self.cmp_expr())
        return e

    def cmp_expr(self) -> Expr:
        e = self.add_expr()
        if self.peek() in ("==", "!=", "<", "<="):
            op = self.next()
            e = Binary(op, e, self.add_expr())
        return e

    def add_expr(self) -> Expr:
        e = self.mul_expr()
        while self.peek() in ("+", "-"):
            op = self.next()
            e = Binary(op, e, self.mul_expr())
        return e

    def mul_expr(self) -> Expr:
        e = self.unary_expr()
        while self.peek() == "*":
            self.next()
            e = Binary("*", e, self.unary_expr())
        return e

    def unary_expr(self) -> Expr:
        if self.peek() == "!":
            self.next()
            return Unary("!", self.unary_expr())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.next()
        if tok == "(":
            e = self.or_expr()
            self.expect(")")
            return e
        if tok in _KEYWORD_LITERALS:
            return Lit(_KEYWORD_LITERALS[tok])
        if tok.isdigit():
            return Lit(int(tok))
        if tok.startswith('"'):
            return Lit(tok[1:-1])
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            return Var(tok)
        raise LangError(f"expected expression atom, got {tok!r}", self.line)


def parse_expr(text: str, line: int = 0) -> Expr:
    return _ExprParser(_tokenize(text, line), line).parse()


# ---------------------------------------------------------------------------
# Program parser
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(r"^(L\d+)\s*:\s*(.*)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_HEADER_INPUT_RE = re.compile(r"^input\s+([A-Za-z_][A-Za-z0-9_]*)(\s+secret)?$")
_HEADER_API_RE = re.compile(r"^core_api\s+(\d+)\s+\"([^\"]*)\"$")

_NEW_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:=\s*new\s*\(\s*\)$")
_READ_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:=\s*\*\s*([A-Za-z_][A-Za-z0-9_]*)$")
_WRITE_RE = re.compile(r"^\*\s*([A-Za-z_][A-Za-z0-9_]*)\s*:=\s*(.+)$")
_COREALLOC_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:=\s*core_alloc\s*\((.*)\)$")
_CORECALL_RE = re.compile(
    r"^(?:([A-Za-z_][A-Za-z0-9_]*(?:\s*,\s*[A-Za-z_][A-Za-z0-9_]*)*)\s*:=\s*)?"
    r"core_call\s+(\d+)\s+on\s+([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)$"
)
_ASSIGN_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:=\s*(.+)$")
_FORK_RE = re.compile(r"^fork\s*\((.*)\)\s*\{$")
_IO_RE = re.compile(r"^io\s+\"([^\"]*)\"\s*\((.*)\)\s*(?:caps\s*\[(.*)\])?$")
_IF_RE = re.compile(r"^if\s+(.+?)\s*\{$")
_WHILE_RE = re.compile(r"^while\s+(.+?)\s*\{$")
_CALLBACK_RE = re.compile(r"^callback\s+\"([^\"]*)\"\s*\{$")


def _strip_comment(line: str) -> str:
    """Remove a trailing // comment, respecting string literals."""
    in_str = False
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == '"':
            in_str = not in_str
        elif not in_str and ch == "/" and line.startswith("//", i):
            return line[:i]
        i += 1
    return line


def _split_names(text: str, line: int, allow_nil: bool = False) -> list[str]:
    text = text.strip()
    if not text:
        return []
    names = [p.strip() for p in text.split(",")]
    for n in names:
        if allow_nil and n == "nil":
            continue
        if not _NAME_RE.match(n):
            raise LangError(f"expected a name, got {n!r}", line)
    return names


def _split_exprs(text: str, line: int) -> list[Expr]:
    """Split a comma-separated expression list (commas never nest here:
    the expression grammar has no call syntax or tuple syntax)."""
    text = text.strip()
    if not text:
        return []
    parts = []
    depth = 0
    cur = ""
    in_str = False
    for ch in text:
        if ch == '"':
            in_str = not in_str
        if not in_str:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append(cur)
                cur = ""
                continue
        cur += ch
    parts.append(cur)
    return [parse_expr(p, line) for p in parts]


class _Parser:
    def __init__(self, source: str):
        self.lines = source.splitlines()
        self.i = 0

    def peek_line(self) -> tuple[int, str] | None:
        """Next meaningful (1-based lineno, stripped text), or None at EOF."""
        while self.i < len(self.lines):
            raw = self.lines[self.i]
            text = raw.strip()
            if text.startswith("//@") or not _strip_comment(raw).strip():
                self.i += 1
                continue
            return self.i + 1, _strip_comment(raw).strip()
        return None

    def next_line(self) -> tuple[int, str]:
        got = self.peek_line()
        if got is None:
            raise LangError("unexpected end of input (unclosed block?)")
        self.i += 1
        return got

    def parse(self) -> Program:
        prog = Program()
        # headers
        while True:
            nxt = self.peek_line()
            if nxt is None:
                break
            lineno, text = nxt
            m = _HEADER_INPUT_RE.match(text)
            if m:
                name = m.group(1)
                if any(d.name == name for d in prog.inputs):
                    raise LangError(f"duplicate input {name!r}", lineno)
                prog.inputs.append(InputDecl(name, secret=bool(m.group(2))))
                self.i += 1
                continue
            m = _HEADER_API_RE.match(text)
            if m:
                k = int(m.group(1))
                if k in prog.core_apis:
                    raise LangError(f"duplicate core_api index {k}", lineno)
                prog.core_apis[k] = m.group(2)
                self.i += 1
                continue
            break
        if prog.core_apis and sorted(prog.core_apis) != list(range(len(prog.core_apis))):
            raise LangError("core_api indices must be dense from 0")
        prog.body = self.parse_block(top=True)
        return prog

    def parse_block(self, top: bool = False) -> list[Stmt]:
        body: list[Stmt] = []
        while True:
            nxt = self.peek_line()
            if nxt is None:
                if top:
                    return body
                raise LangError("unexpected end of input (unclosed block?)")
            lineno, text = nxt
            if text == "}" or text == "} else {":
                if top:
                    raise LangError("unmatched '}'", lineno)
                return body
            self.i += 1
            body.append(self.parse_stmt(lineno, text))

    def parse_stmt(self, lineno: int, text: str) -> Stmt:
        label = ""
        m = _LABEL_RE.match(text)
        if m:
            label, text = m.group(1), m.group(2).strip()
        if not text:
            raise LangError("label without a statement", lineno)

        if text == "skip":
            return Skip(label=label)

        m = _FORK_RE.match(text)
        if m:
            captured = _split_names(m.group(1), lineno)
            body = self.parse_block()
            self._expect_close(lineno)
            return Fork(captured=captured, body=body, label=label)

        m = _IF_RE.match(text)
        if m:
            cond = parse_expr(m.group(1), lineno)
            then = self.parse_block()
            closing_lineno, closing = self.next_line()
            orelse: list[Stmt] = []
            if closing == "} else {":
                orelse = self.parse_block()
                self._expect_close(closing_lineno)
            elif closing != "}":
                raise LangError(f"expected '}}' or '}} else {{', got {closing!r}", closing_lineno)
            return Branch(cond=cond, then=then, orelse=orelse, label=label)

        m = _WHILE_RE.match(text)
        if m:
            cond = parse_expr(m.group(1), lineno)
            body = self.parse_block()
            self._expect_close(lineno)
            return Loop(cond=cond, body=body, label=label)

        m = _CALLBACK_RE.match(text)
        if m:
            body = self.parse_block()
            self._expect_close(lineno)
            return Callback(name=m.group(1), body=body, label=label)

        m = _IO_RE.match(text)
        if m:
            args = _split_exprs(m.group(2), lineno)
            caps = _split_names(m.group(3) or "", lineno)
            return IoCall(op=m.group(1), args=args, caps=caps, label=label)

        m = _NEW_RE.match(text)
        if m:
            return HeapAlloc(x=m.group(1), label=label)

        m = _READ_RE.match(text)
        if m:
            return HeapRead(x=m.group(1), src=m.group(2), label=label)

        m = _WRITE_RE.match(text)
        if m:
            return HeapWrite(target=m.group(1), value=parse_expr(m.group(2), lineno), label=label)

        m = _COREALLOC_RE.match(text)
        if m:
            args = _split_names(m.group(2), lineno, allow_nil=True)
            return CoreAlloc(c=m.group(1), args=args, label=label)

        m = _CORECALL_RE.match(text)
        if m:
            rets = _split_names(m.group(1) or "", lineno)
            args = _split_names(m.group(4), lineno, allow_nil=True)
            return CoreCall(
                rets=rets, api=int(m.group(2)), recv=m.group(3), args=args, label=label
            )

        m = _ASSIGN_RE.match(text)
        if m:
            rhs = m.group(2).strip()
            if rhs.startswith("*"):
                raise LangError("heap read must have the form 'x := *y'", lineno)
            return Assign(x=m.group(1), value=parse_expr(rhs, lineno), label=label)

        raise LangError(f"cannot parse statement: {text!r}", lineno)

    def _expect_close(self, open_lineno: int) -> None:
        lineno, text = self.next_line()
        if text != "}":
            raise LangError(f"expected '}}' closing block opened at line {open_lineno}", lineno)


def _assign_labels(prog: Program) -> None:
    used: set[int] = set()
    for s in walk(prog.body):
        if s.label:
            m = re.fullmatch(r"L(\d+)", s.label)
            if not m:
                raise LangError(f"bad label {s.label!r} (expected L<k>)")
            k = int(m.group(1))
            if k in used:
                raise LangError(f"duplicate label {s.label}")
            used.add(k)
    counter = 0
    for s in walk(prog.body):
        if not s.label:
            while counter in used:
                counter += 1
            used.add(counter)
            s.label = f"L{counter}"


def _check_scoping(prog: Program) -> None:
    """SSA + use-before-definition, raising on the first violation."""
    defined_once: set[str] = {d.name for d in prog.inputs}
    if len(defined_once) != len(prog.inputs):
        raise LangError("duplicate input name")
    for s in walk(prog.body):
        for name in defined_var_names(s):
            if name in defined_once:
                raise LangError(f"reassignment of SSA variable {name!r} at {s.label}")
            defined_once.add(name)
        if isinstance(s, CoreCall) and s.api not in prog.core_apis:
            raise LangError(f"unknown core_api index {s.api} at {s.label}")

    def check_block(body: list[Stmt], defined: set[str]) -> set[str]:
        for s in body:
            for name in sorted(used_var_names(s)):
                if name not in defined:
                    raise LangError(f"use of undefined variable {name!r} at {s.label}")
            if isinstance(s, Fork):
                # Lenient: the fork body sees the enclosing scope here; the
                # capture discipline itself is validate_program's job.
                check_block(s.body, set(defined))
            elif isinstance(s, Branch):
                after_then = check_block(s.then, set(defined))
                after_else = check_block(s.orelse, set(defined))
                defined |= after_then & after_else
            elif isinstance(s, Loop):
                check_block(s.body, set(defined))
            elif isinstance(s, Callback):
                defined = check_block(s.body, defined)
            defined |= set(defined_var_names(s))
        return defined

    check_block(prog.body, {d.name for d in prog.inputs})


def parse_program(source: str) -> Program:
    prog = _Parser(source).parse()
    _assign_labels(prog)
    _check_scoping(prog)
    return prog


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PREC = {"or": 1, "and": 2, "==": 3, "!=": 3, "<": 3, "<=": 3, "+": 4, "-": 4, "*": 5}


def print_expr(e: Expr, parent_prec: int = 0, right: bool = False) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        if e.value is None:
            return "nil"
        if e.value is True:
            return "true"
        if e.value is False:
            return "false"
        if isinstance(e.value, str):
            return f'"{e.value}"'
        return str(e.value)
    if isinstance(e, Unary):
        return "!" + print_expr(e.operand, 6)
    prec = _PREC[e.op]
    text = (
        print_expr(e.left, prec)
        + f" {e.op} "
        + print_expr(e.right, prec, right=True)
    )
    if prec < parent_prec or (right and prec == parent_prec):
        return f"({text})"
    return text


def _print_stmt(s: Stmt, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    lab = f"{s.label}: " if s.label else ""
    if isinstance(s, Skip):
        out.append(f"{pad}{lab}skip")
    elif isinstance(s, HeapAlloc):
        out.append(f"{pad}{lab}{s.x} := new()")
    elif isinstance(s, HeapRead):
        out.append(f"{pad}{lab}{s.x} := *{s.src}")
    elif isinstance(s, HeapWrite):
        out.append(f"{pad}{lab}*{s.target} := {print_expr(s.value)}")
    elif isinstance(s, Assign):
        out.append(f"{pad}{lab}{s.x} := {print_expr(s.value)}")
    elif isinstance(s, CoreAlloc):
        out.append(f"{pad}{lab}{s.c} := core_alloc({', '.join(s.args)})")
    elif isinstance(s, CoreCall):
        head = f"{', '.join(s.rets)} := " if s.rets else ""
        out.append(
            f"{pad}{lab}{head}core_call {s.api} on {s.recv} ({', '.join(s.args)})"
        )
    elif isinstance(s, Fork):
        out.append(f"{pad}{lab}fork({', '.join(s.captured)}) {{")
        for inner in s.body:
            _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, IoCall):
        args = ", ".join(print_expr(a) for a in s.args)
        out.append(f'{pad}{lab}io "{s.op}" ({args}) caps[{", ".join(s.caps)}]')
    elif isinstance(s, Branch):
        out.append(f"{pad}{lab}if {print_expr(s.cond)} {{")
        for inner in s.then:
            _print_stmt(inner, indent + 1, out)
        if s.orelse:
            out.append(f"{pad}}} else {{")
            for inner in s.orelse:
                _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Loop):
        out.append(f"{pad}{lab}while {print_expr(s.cond)} {{")
        for inner in s.body:
            _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Callback):
        out.append(f'{pad}{lab}callback "{s.name}" {{')
        for inner in s.body:
            _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    else:  # pragma: no cover
        raise TypeError(f"unknown statement {s!r}")


def print_program(prog: Program) -> str:
    out: list[str] = []
    for d in prog.inputs:
        out.append(f"input {d.name} secret" if d.secret else f"input {d.name}")
    for k in sorted(prog.core_apis):
        out.append(f'core_api {k} "{prog.core_apis[k]}"')
    if out and prog.body:
        out.append("")
    for s in prog.body:
        _print_stmt(s, 0, out)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # ssa | use-before-def | label | api | capture | shallow
    label: str
    message: str


def validate_program(prog: Program) -> list[ValidationIssue]:
    """Well-formedness report: SSA discipline, scoping, fork-capture
    discipline, and shallowness of core-call arguments.

    Violations are report entries, never exceptions, so that mutated or
    hand-constructed programs can be inspected.
    """
    issues: list[ValidationIssue] = []

    seen_labels: set[str] = set()
    for s in walk(prog.body):
        if not s.label or not re.fullmatch(r"L\d+", s.label):
            issues.append(ValidationIssue("label", s.label, f"missing or malformed label {s.label!r}"))
        elif s.label in seen_labels:
            issues.append(ValidationIssue("label", s.label, f"duplicate label {s.label}"))
        seen_labels.add(s.label)

    defined_once: set[str] = set()
    for d in prog.inputs:
        if d.name in defined_once:
            issues.append(ValidationIssue("ssa", "", f"duplicate input {d.name!r}"))
        defined_once.add(d.name)
    for s in walk(prog.body):
        for name in defined_var_names(s):
            if name in defined_once:
                issues.append(
                    ValidationIssue("ssa", s.label, f"reassignment of SSA variable {name!r}")
                )
            defined_once.add(name)
        if isinstance(s, CoreCall) and s.api not in prog.core_apis:
            issues.append(ValidationIssue("api", s.label, f"unknown core_api index {s.api}"))

    # Fork-capture discipline: a fork body may reference outer variables only
    # via the capture list.  Body-local definitions are fine.
    def check_captures(body: list[Stmt], outer: set[str]) -> None:
        for s in body:
            if isinstance(s, Fork):
                for name in s.captured:
                    if name not in outer:
                        issues.append(
                            ValidationIssue(
                                "capture", s.label, f"captured variable {name!r} not defined"
                            )
                        )
                visible = set(s.captured)
                for inner in s.body:
                    _check_fork_body(inner, visible, outer)
                check_captures(s.body, outer | _block_defs(s.body))
            elif isinstance(s, Branch):
                check_captures(s.then, outer | _block_defs(s.then))
                check_captures(s.orelse, outer | _block_defs(s.orelse))
            elif isinstance(s, (Loop, Callback)):
                check_captures(s.body, outer | _block_defs(s.body))
            outer = outer | set(defined_var_names(s))

    def _block_defs(body: list[Stmt]) -> set[str]:
        return {n for s in walk(body) for n in defined_var_names(s)}

    def _check_fork_body(s: Stmt, visible: set[str], outer: set[str]) -> None:
        for name in sorted(used_var_names(s)):
            if name not in visible and name in outer:
                issues.append(
                    ValidationIssue(
                        "capture",
                        s.label,
                        f"fork body uses {name!r} without capturing it",
                    )
                )
        visible |= set(defined_var_names(s))
        if isinstance(s, Fork):
            return  # the nested fork re-checks its own body
        for sub in (
            s.body if isinstance(s, (Loop, Callback)) else
            s.then + s.orelse if isinstance(s, Branch) else []
        ):
            _check_fork_body(sub, visible, outer)

    check_captures(prog.body, {d.name for d in prog.inputs})

    # Shallowness: core-call data arguments must point to cells that hold no
    # further pointers (single-value cells make ownership transfer exact).
    from . import points_to  # local import: points_to imports this module

    sol = points_to.compute_points_to(prog)
    for s in walk(prog.body):
        if isinstance(s, (CoreAlloc, CoreCall)):
            for a in s.args:
                if a == "nil":
                    continue
                for site in sorted(sol.pts.get(a, set())):
                    if sol.contents.get(site):
                        issues.append(
                            ValidationIssue(
                                "shallow",
                                s.label,
                                f"argument {a!r} may point to {site}, whose cell may hold pointers",
                            )
                        )
    return issues
