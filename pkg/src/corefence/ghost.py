"""Ghost-set instrumentation.

Wraps every statement with erasable bookkeeping operations over four ghost
variables: ``slh`` (per-thread set of locally-owned cell addresses), ``sih``
(per-thread set of live core-instance addresses), ``sgh`` (global set of
shared cell addresses), and ``used`` (global set of consumed role-instance
identifiers).  The interpreter executes these operations; a removal of an
absent non-nil address is the runtime signature of a violated side
condition.

Both set union and removal ignore nil and non-address values: permissions
exist only for heap locations, value-typed data needs none.

Heap accesses dispatch at runtime: if the dereferenced address is in the
executing thread's ``slh`` the bracket touches ``slh`` alone; otherwise the
access runs as one atomic block that temporarily removes the address from
``sgh`` (failing if it is in neither).  Writes through a shared cell
additionally move every location reachable from the stored value out of the
writer's ``slh`` into ``sgh`` — the written-to cell may be read by other
threads, so everything it can now lead to is shared.

Instrumentation is erasable two ways: ``strip`` recovers the original
program object, and the printed form marks every ghost line with ``//@``,
which the parser skips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lang import (
    Assign,
    Branch,
    Callback,
    CoreAlloc,
    CoreCall,
    Expr,
    Fork,
    HeapAlloc,
    HeapRead,
    HeapWrite,
    IoCall,
    Loop,
    Program,
    Skip,
    Stmt,
    Var,
    print_expr,
    print_program,
)

# ---------------------------------------------------------------------------
# Ghost operations
# ---------------------------------------------------------------------------

SLH = "slh"
SIH = "sih"
SGH = "sgh"
USED = "used"


@dataclass(frozen=True)
class SetAdd:
    target: str
    var: str  # runtime value of this variable (nil / non-address skipped)


@dataclass(frozen=True)
class SetRemove:
    target: str
    var: str  # removing an absent non-nil address is a ghost failure


@dataclass(frozen=True)
class SetAddMany:
    target: str
    vars: tuple[str, ...]


@dataclass(frozen=True)
class SetRemoveMany:
    target: str
    vars: tuple[str, ...]  # removed one by one; aliases fail on the second


@dataclass(frozen=True)
class FlagMark:
    """Pick a fresh role-instance id, record it in ``used``."""

    target: str = USED


@dataclass(frozen=True)
class MoveReach:
    """Move reach(value(e)) ∩ slh from the thread's slh into sgh."""

    exprs: tuple[Expr, ...]


GhostOp = SetAdd | SetRemove | SetAddMany | SetRemoveMany | FlagMark | MoveReach


@dataclass(frozen=True)
class Atomic:
    """Marker wrapper: these operations plus the enclosed program statement
    execute as one indivisible step."""

    ops: tuple[GhostOp, ...]


@dataclass(frozen=True)
class AccessPlan:
    """Runtime-dispatched bracket for a heap read or write.

    ``dispatch_var`` names the dereferenced pointer.  If its value is in the
    executing thread's slh, ``local_pre``/``local_post`` run around the
    access; otherwise the whole access executes as atomic
    (global_atomic_pre ; access ; global_atomic_post).
    """

    dispatch_var: str
    local_pre: tuple[GhostOp, ...]
    local_post: tuple[GhostOp, ...]
    global_atomic_pre: Atomic
    global_atomic_post: Atomic


@dataclass
class InstrStmt:
    stmt: Stmt
    pre: tuple[GhostOp, ...] = ()
    post: tuple[GhostOp, ...] = ()
    access: AccessPlan | None = None
    sub: dict[str, list["InstrStmt"]] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.stmt.label


@dataclass
class InstrumentedProgram:
    program: Program
    body: list[InstrStmt]


# ---------------------------------------------------------------------------
# The transformation
# ---------------------------------------------------------------------------


def _instrument_stmt(s: Stmt) -> InstrStmt:
    if isinstance(s, HeapAlloc):
        return InstrStmt(stmt=s, post=(SetAdd(SLH, s.x),))
    if isinstance(s, HeapRead):
        return InstrStmt(
            stmt=s,
            access=AccessPlan(
                dispatch_var=s.src,
                local_pre=(SetRemove(SLH, s.src),),
                local_post=(SetAdd(SLH, s.src),),
                global_atomic_pre=Atomic((SetRemove(SGH, s.src),)),
                global_atomic_post=Atomic((SetAdd(SGH, s.src),)),
            ),
        )
    if isinstance(s, HeapWrite):
        return InstrStmt(
            stmt=s,
            access=AccessPlan(
                dispatch_var=s.target,
                local_pre=(SetRemove(SLH, s.target),),
                local_post=(SetAdd(SLH, s.target),),
                global_atomic_pre=Atomic(
                    (SetRemove(SGH, s.target), MoveReach((s.value,)))
                ),
                global_atomic_post=Atomic((SetAdd(SGH, s.target),)),
            ),
        )
    if isinstance(s, CoreAlloc):
        return InstrStmt(
            stmt=s,
            pre=(FlagMark(), SetRemoveMany(SLH, tuple(s.args))),
            post=(SetAddMany(SLH, tuple(s.args)), SetAdd(SIH, s.c)),
        )
    if isinstance(s, CoreCall):
        return InstrStmt(
            stmt=s,
            pre=(SetRemove(SIH, s.recv), SetRemoveMany(SLH, tuple(s.args))),
            post=(SetAddMany(SLH, tuple(s.args) + tuple(s.rets)), SetAdd(SIH, s.recv)),
        )
    if isinstance(s, Fork):
        return InstrStmt(
            stmt=s,
            pre=(MoveReach(tuple(Var(x) for x in s.captured)),),
            sub={"body": [_instrument_stmt(inner) for inner in s.body]},
        )
    if isinstance(s, Branch):
        return InstrStmt(
            stmt=s,
            sub={
                "then": [_instrument_stmt(inner) for inner in s.then],
                "orelse": [_instrument_stmt(inner) for inner in s.orelse],
            },
        )
    if isinstance(s, Loop):
        return InstrStmt(stmt=s, sub={"body": [_instrument_stmt(inner) for inner in s.body]})
    if isinstance(s, Callback):
        return InstrStmt(stmt=s, sub={"body": [_instrument_stmt(inner) for inner in s.body]})
    # Skip, Assign, IoCall: ghost-neutral
    assert isinstance(s, (Skip, Assign, IoCall)), s
    return InstrStmt(stmt=s)


def instrument(prog: Program) -> InstrumentedProgram:
    return InstrumentedProgram(
        program=prog, body=[_instrument_stmt(s) for s in prog.body]
    )


def strip(ip: InstrumentedProgram) -> Program:
    """Erase instrumentation, recovering the original program."""
    return Program(
        inputs=list(ip.program.inputs),
        core_apis=dict(ip.program.core_apis),
        body=[i.stmt for i in ip.body],
    )


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def _op_text(op: GhostOp) -> str:
    if isinstance(op, SetAdd):
        return f"{op.target} += {{{op.var}}}"
    if isinstance(op, SetRemove):
        return f"{op.target} -= {{{op.var}}}"
    if isinstance(op, SetAddMany):
        return f"{op.target} += {{{', '.join(op.vars)}}}"
    if isinstance(op, SetRemoveMany):
        return f"{op.target} -= {{{', '.join(op.vars)}}}"
    if isinstance(op, FlagMark):
        return f"{op.target} += {{fresh rid}}"
    if isinstance(op, MoveReach):
        inner = ", ".join(print_expr(e) for e in op.exprs)
        return f"{SGH} <-move- reach({inner}) & {SLH}"
    raise TypeError(op)  # pragma: no cover


def _atomic_text(block: Atomic, position: str) -> str:
    inner = "; ".join(_op_text(op) for op in block.ops)
    return f"atomic[{position}] {{ {inner} }}"


def _print_instr(i: InstrStmt, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    for op in i.pre:
        out.append(f"{pad}//@ {_op_text(op)}")
    if i.access is not None:
        a = i.access
        local = "; ".join(_op_text(op) for op in a.local_pre)
        out.append(
            f"{pad}//@ if {a.dispatch_var} in {SLH} {{ {local} }} "
            f"else {_atomic_text(a.global_atomic_pre, 'pre')}"
        )

    # print the statement itself, descending into instrumented bodies
    s = i.stmt
    lab = f"{s.label}: " if s.label else ""
    if isinstance(s, Fork):
        out.append(f"{pad}{lab}fork({', '.join(s.captured)}) {{")
        out.append(f"{pad}  //@ {SLH} := {{}}; {SIH} := {{}}")
        for inner in i.sub["body"]:
            _print_instr(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Branch):
        out.append(f"{pad}{lab}if {print_expr(s.cond)} {{")
        for inner in i.sub["then"]:
            _print_instr(inner, indent + 1, out)
        if s.orelse:
            out.append(f"{pad}}} else {{")
            for inner in i.sub["orelse"]:
                _print_instr(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Loop):
        out.append(f"{pad}{lab}while {print_expr(s.cond)} {{")
        for inner in i.sub["body"]:
            _print_instr(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Callback):
        out.append(f'{pad}{lab}callback "{s.name}" {{')
        for inner in i.sub["body"]:
            _print_instr(inner, indent + 1, out)
        out.append(f"{pad}}}")
    else:
        from .lang import _print_stmt  # reuse the plain printer for leaves

        _print_stmt(s, indent, out)

    if i.access is not None:
        a = i.access
        local = "; ".join(_op_text(op) for op in a.local_post)
        out.append(
            f"{pad}//@ if moved from {SLH} {{ {local} }} "
            f"else {_atomic_text(a.global_atomic_post, 'post')}"
        )
    for op in i.post:
        out.append(f"{pad}//@ {_op_text(op)}")


def print_instrumented(ip: InstrumentedProgram) -> str:
    out: list[str] = []
    for d in ip.program.inputs:
        out.append(f"input {d.name} secret" if d.secret else f"input {d.name}")
    for k in sorted(ip.program.core_apis):
        out.append(f'core_api {k} "{ip.program.core_apis[k]}"')
    if out and ip.body:
        out.append("")
    out.append(f"//@ init {SLH} := {{}}; {SIH} := {{}}; {SGH} := {{}}; {USED} := {{}}")
    for i in ip.body:
        _print_instr(i, 0, out)
    return "\n".join(out) + "\n"
