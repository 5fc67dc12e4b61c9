"""Concrete interpreter for instrumented programs.

Runs one interleaving at a time under an explicit schedule (a list of thread
ids), executing each instrumented statement — ghost bracket included — as a
single indivisible step.  On top of single runs it provides:

* ``explore``: exhaustive depth-first enumeration of schedules by prefix
  replay, with a global step budget and shortest-witness tracking per
  failure class;
* a requirements monitor checking ownership preconditions of writes and
  core invocations against runtime provenance and accessibility;
* ``detect_races``: happens-before race detection over per-run access logs
  (accesses under an atomic shared bracket are mutually exclusive and do
  not race with each other);
* ``crosscheck_static``: validates the static analyses against observed
  runtime states (points-to containment, escape soundness, ghost-set
  containment);
* optional shadow taint tracking mirroring the static dataflow rules, used
  to corroborate reported flows on concrete runs.

Scheduling is deterministic: runnable threads are considered in thread-id
order and thread ids are assigned in spawn order, so identical schedules
give identical runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .escape import EscapeMap
from .ghost import (
    SGH,
    SIH,
    SLH,
    AccessPlan,
    FlagMark,
    GhostOp,
    InstrStmt,
    InstrumentedProgram,
    MoveReach,
    SetAdd,
    SetAddMany,
    SetRemove,
    SetRemoveMany,
)
from .lang import (
    Assign,
    Binary,
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
    Lit,
    Loop,
    Program,
    Skip,
    Unary,
    Var,
)
from .passthrough import PassMap
from .points_to import PtsSolution, ret_site
from .taint import TaintConfig

# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

KIND_APP = "app"
KIND_INSTANCE = "instance"
KIND_RET = "ret"


@dataclass(frozen=True, eq=True)
class Addr:
    """A heap address with allocation provenance.

    ``site`` is the label of the allocating statement (or a return-summary
    site for cells handed out by core calls), which is what the static
    analyses reason about.  ``rid`` is set only for core instances.
    """

    ident: int
    site: str
    kind: str
    rid: int | None = None

    def __repr__(self) -> str:  # compact, deterministic
        return f"<{self.kind}:{self.site}#{self.ident}>"


Value = Any  # None | bool | int | Addr


def is_addr(v: Value) -> bool:
    return isinstance(v, Addr)


def reach_value(v: Value, heap: dict[Addr, Value]) -> set[Addr]:
    """All addresses reachable from ``v`` through the current heap,
    including ``v`` itself if it is an address."""
    out: set[Addr] = set()
    stack = [v]
    while stack:
        u = stack.pop()
        if isinstance(u, Addr) and u not in out:
            out.add(u)
            if u in heap:
                stack.append(heap[u])
    return out


# ---------------------------------------------------------------------------
# Crash — a *defined* halt of the whole machine (nil deref etc.)
# ---------------------------------------------------------------------------


class _Halt(Exception):
    def __init__(self, status: str, kind: str | None, message: str):
        super().__init__(message)
        self.status = status
        self.kind = kind
        self.message = message


def _crash(message: str) -> _Halt:
    return _Halt("crash", "CRASH", message)


# ---------------------------------------------------------------------------
# Core contracts
# ---------------------------------------------------------------------------

# Concrete event terms: None | int | str | (fname, (sub, ...))
ConcreteTerm = Any


def render_term(t: ConcreteTerm) -> str:
    if isinstance(t, tuple):
        name, args = t
        return f"{name}({', '.join(render_term(a) for a in args)})"
    if t is None:
        return "nil"
    return repr(t) if isinstance(t, str) else str(t)


@dataclass(frozen=True)
class Event:
    """One core-boundary I/O event, attributed to a role instance."""

    kind: str  # vin | vout | in | out
    rid: int
    term: ConcreteTerm
    step: int
    tid: int
    label: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rid": self.rid,
            "term": render_term(self.term),
            "step": self.step,
            "tid": self.tid,
            "label": self.label,
        }


@dataclass(frozen=True)
class ContractAction:
    state: tuple[tuple[str, Any], ...] = ()  # (key, term-expr) updates
    events: tuple[tuple[str, Any], ...] = ()  # (kind, term-expr)
    returns: tuple[Any, ...] = ()  # term-exprs; ["cell"] makes a fresh cell


@dataclass(frozen=True)
class Contract:
    name: str
    alloc: ContractAction | None
    apis: dict[str, ContractAction]


_EVENT_KINDS = ("vin", "vout", "in", "out")


def _parse_action(obj: dict) -> ContractAction:
    state = tuple((k, v) for k, v in obj.get("state", {}).items())
    events = []
    for ev in obj.get("events", ()):
        kind, expr = ev[0], ev[1]
        if kind not in _EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        events.append((kind, expr))
    return ContractAction(
        state=state, events=tuple(events), returns=tuple(obj.get("returns", ()))
    )


def load_contract(path: str) -> Contract:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return contract_from_dict(obj)


def contract_from_dict(obj: dict) -> Contract:
    alloc = _parse_action(obj["alloc"]) if "alloc" in obj else None
    apis = {name: _parse_action(spec) for name, spec in obj.get("apis", {}).items()}
    return Contract(name=obj.get("name", "core"), alloc=alloc, apis=apis)


# ---------------------------------------------------------------------------
# Per-run records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    tid: int
    label: str
    summary: str


@dataclass(frozen=True)
class Access:
    step: int
    tid: int
    label: str
    addr: Addr
    write: bool
    atomic: bool
    clock: tuple[tuple[int, int], ...]  # frozen vector clock


@dataclass(frozen=True)
class Race:
    site: str
    first_label: str
    second_label: str
    kinds: str  # "write/write" | "read/write" | "write/read"

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "first": self.first_label,
            "second": self.second_label,
            "kinds": self.kinds,
        }


@dataclass(frozen=True)
class RuntimeFlow:
    source: str
    sink_label: str
    value: str

    def to_dict(self) -> dict:
        return {"source": self.source, "sink": self.sink_label, "value": self.value}


@dataclass(frozen=True)
class CrossViolation:
    kind: str  # pts | heap-pts | local-claim | escape | ghost-containment | ghost-absence
    label: str
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "detail": self.detail}


@dataclass
class Outcome:
    status: str  # ok | crash | ghost-failure | requirement-failure | budget
    kind: str | None  # OMEGA-* | REQ-* | CRASH | BUDGET | None
    label: str | None
    tid: int | None
    step: int | None
    message: str

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "kind": self.kind,
            "label": self.label,
            "tid": self.tid,
            "step": self.step,
            "message": self.message,
        }


@dataclass
class RunResult:
    outcome: Outcome
    schedule: list[int]
    runnable_sets: list[tuple[int, ...]]
    steps: int
    trace: list[StepRecord]
    events: list[Event]
    app_ios: list[dict]
    accesses: list[Access]
    flows: list[RuntimeFlow]
    cross_violations: list[CrossViolation]


# ---------------------------------------------------------------------------
# Thread state
# ---------------------------------------------------------------------------


@dataclass
class _Frame:
    block: list[InstrStmt]
    idx: int = 0
    loop: InstrStmt | None = None  # re-test this loop when the block ends
    callback: bool = False


@dataclass
class _Thread:
    tid: int
    frames: list[_Frame]
    env: dict[str, Value]
    slh: set[Addr] = field(default_factory=set)
    sih: set[Addr] = field(default_factory=set)
    accessible: set[Addr] = field(default_factory=set)
    clock: dict[int, int] = field(default_factory=dict)
    env_taint: dict[str, frozenset[str]] = field(default_factory=dict)
    finished: bool = False

    def in_callback(self) -> bool:
        return any(f.callback for f in self.frames)


# ---------------------------------------------------------------------------
# The machine
# ---------------------------------------------------------------------------

_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}

_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
}


class Machine:
    def __init__(
        self,
        ip: InstrumentedProgram,
        inputs: dict[str, Value] | None = None,
        contract: Contract | None = None,
        taint_config: TaintConfig | None = None,
        req_checks: bool = True,
        static: tuple[PtsSolution, EscapeMap, PassMap] | None = None,
        max_steps: int = 2000,
    ):
        self.ip = ip
        self.prog = ip.program
        self.contract = contract
        self.taint_config = taint_config
        self.req_checks = req_checks
        self.static = static
        self.max_steps = max_steps

        self.heap: dict[Addr, Value] = {}
        self.heap_taint: dict[Addr, frozenset[str]] = {}
        self.sgh: set[Addr] = set()
        self.used: set[int] = set()
        self._rid_counter = 0
        self._addr_counter = 0
        self.instance_state: dict[Addr, dict[str, ConcreteTerm]] = {}
        self.instance_taint: dict[Addr, frozenset[str]] = {}

        env = dict(inputs or default_inputs(self.prog))
        env_taint = {}
        for d in self.prog.inputs:
            if d.name not in env:
                raise ValueError(f"missing input {d.name!r}")
            if d.secret:
                env_taint[d.name] = frozenset({f"input:{d.name}"})
        main = _Thread(tid=0, frames=[_Frame(block=ip.body)], env=env, clock={0: 1})
        main.env_taint = env_taint
        main.accessible = set()
        self.threads: dict[int, _Thread] = {0: main}
        self._next_tid = 1

        self.step_count = 0
        self.trace: list[StepRecord] = []
        self.events: list[Event] = []
        self.app_ios: list[dict] = []
        self.accesses: list[Access] = []
        self.flows: list[RuntimeFlow] = []
        self.cross_violations: list[CrossViolation] = []
        self._cross_seen: set[tuple] = set()
        self._cur_label: str = ""
        self._pending_rid: int = -1
        # post-statement locality obligations, checked after the global
        # accessibility re-closure so freshly reachable threads count
        self._pending_req: list[tuple[Value, str]] = []

    # -- scheduling ---------------------------------------------------------

    def runnable(self) -> tuple[int, ...]:
        out = []
        for tid in sorted(self.threads):
            t = self.threads[tid]
            if not t.finished and self._fetch(t) is not None:
                out.append(tid)
        return tuple(out)

    def _fetch(self, t: _Thread):
        """Next unit of work: ('instr', i) or ('recheck', frame), or None."""
        while t.frames:
            top = t.frames[-1]
            if top.idx < len(top.block):
                return ("instr", top.block[top.idx])
            if top.loop is not None and top.idx == len(top.block):
                return ("recheck", top)
            t.frames.pop()
        if not t.finished:
            t.finished = True
        return None

    def run(self, schedule: Sequence[int] = ()) -> RunResult:
        """Execute under ``schedule``; past its end, always pick the lowest
        runnable thread id.  Returns the per-run result; never raises."""
        taken: list[int] = []
        runnable_sets: list[tuple[int, ...]] = []
        outcome = Outcome("ok", None, None, None, None, "completed")
        while True:
            avail = self.runnable()
            if not avail:
                break
            if self.step_count >= self.max_steps:
                outcome = Outcome(
                    "budget", "BUDGET", None, None, self.step_count,
                    f"step budget {self.max_steps} exhausted",
                )
                break
            i = len(taken)
            if i < len(schedule):
                tid = schedule[i]
                if tid not in avail:
                    raise ValueError(
                        f"schedule step {i}: thread {tid} not runnable (runnable={avail})"
                    )
            else:
                tid = avail[0]
            runnable_sets.append(avail)
            taken.append(tid)
            try:
                self._pending_req = []
                self._step(self.threads[tid])
                self._reclose_accessible()
                if self.req_checks:
                    self._req_post_local(self._pending_req, self.threads[tid])
            except _Halt as h:
                outcome = Outcome(
                    h.status, h.kind, self._cur_label, tid, self.step_count, h.message
                )
                break
            if self.static is not None:
                self._crosscheck_step(tid)
        return RunResult(
            outcome=outcome,
            schedule=taken,
            runnable_sets=runnable_sets,
            steps=self.step_count,
            trace=self.trace,
            events=self.events,
            app_ios=self.app_ios,
            accesses=self.accesses,
            flows=self.flows,
            cross_violations=self.cross_violations,
        )

    # -- evaluation ---------------------------------------------------------

    def _eval(self, e: Expr, t: _Thread) -> Value:
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, Var):
            if e.name not in t.env:
                raise _crash(f"undefined variable {e.name!r}")
            return t.env[e.name]
        if isinstance(e, Unary):
            v = self._eval(e.operand, t)
            if e.op == "!":
                if not isinstance(v, bool):
                    raise _crash("! applied to non-boolean")
                return not v
            if isinstance(v, bool) or not isinstance(v, int):
                raise _crash("unary - applied to non-integer")
            return -v
        if isinstance(e, Binary):
            a = self._eval(e.left, t)
            if e.op == "and":
                if not isinstance(a, bool):
                    raise _crash("and applied to non-boolean")
                return a and self._eval_bool(e.right, t)
            if e.op == "or":
                if not isinstance(a, bool):
                    raise _crash("or applied to non-boolean")
                return a or self._eval_bool(e.right, t)
            b = self._eval(e.right, t)
            if e.op in ("==", "!="):
                return _CMP[e.op](a, b)
            if e.op in ("<", "<=", ">", ">="):
                if not self._both_int(a, b):
                    raise _crash(f"{e.op} applied to non-integers")
                return _CMP[e.op](a, b)
            if e.op == "/":
                if not self._both_int(a, b):
                    raise _crash("/ applied to non-integers")
                if b == 0:
                    raise _crash("division by zero")
                return a // b
            if not self._both_int(a, b):
                raise _crash(f"{e.op} applied to non-integers")
            return _ARITH[e.op](a, b)
        raise TypeError(e)  # pragma: no cover

    def _eval_bool(self, e: Expr, t: _Thread) -> bool:
        v = self._eval(e, t)
        if not isinstance(v, bool):
            raise _crash("condition is not a boolean")
        return v

    @staticmethod
    def _both_int(a: Value, b: Value) -> bool:
        return (
            isinstance(a, int) and not isinstance(a, bool)
            and isinstance(b, int) and not isinstance(b, bool)
        )

    def _taint_of_expr(self, e: Expr, t: _Thread) -> frozenset[str]:
        out: frozenset[str] = frozenset()
        for name in sorted(_expr_vars(e)):
            out |= t.env_taint.get(name, frozenset())
        return out

    def _lookup(self, name: str | None, t: _Thread) -> Value:
        """Value of a variable-or-nil argument position."""
        if name is None or name == "nil":
            return None
        if name not in t.env:
            raise _crash(f"undefined variable {name!r}")
        return t.env[name]

    # -- ghost operations ---------------------------------------------------

    def _ghost_target(self, target: str, t: _Thread) -> set[Addr]:
        if target == SLH:
            return t.slh
        if target == SIH:
            return t.sih
        if target == SGH:
            return self.sgh
        raise TypeError(target)  # pragma: no cover

    def _ghost_add(self, target: str, v: Value, t: _Thread) -> None:
        if is_addr(v):
            self._ghost_target(target, t).add(v)

    def _ghost_remove(self, target: str, v: Value, t: _Thread, omega: str) -> None:
        if not is_addr(v):
            return  # permissions only track heap locations
        s = self._ghost_target(target, t)
        if v not in s:
            raise _Halt(
                "ghost-failure", omega,
                f"{target} does not hold {v!r} at removal",
            )
        s.discard(v)

    def _exec_ops(self, ops: Iterable[GhostOp], t: _Thread, omega: str) -> None:
        for op in ops:
            if isinstance(op, SetAdd):
                self._ghost_add(op.target, self._lookup(op.var, t), t)
            elif isinstance(op, SetRemove):
                self._ghost_remove(op.target, self._lookup(op.var, t), t, omega)
            elif isinstance(op, SetAddMany):
                for x in op.vars:
                    self._ghost_add(op.target, self._lookup(x, t), t)
            elif isinstance(op, SetRemoveMany):
                for x in op.vars:
                    self._ghost_remove(op.target, self._lookup(x, t), t, omega)
            elif isinstance(op, FlagMark):
                rid = self._rid_counter
                self._rid_counter += 1
                assert rid not in self.used
                self.used.add(rid)
                self._pending_rid = rid
            elif isinstance(op, MoveReach):
                moved: set[Addr] = set()
                for e in op.exprs:
                    v = self._eval(e, t)
                    moved |= reach_value(v, self.heap) & t.slh
                t.slh -= moved
                self.sgh |= moved
            else:  # pragma: no cover
                raise TypeError(op)

    # -- requirements monitor ------------------------------------------------

    def _app_managed(self, a: Addr) -> bool:
        return a.kind in (KIND_APP, KIND_RET)

    def _accessible_count(self, a: Addr) -> int:
        return sum(1 for t in self.threads.values() if a in t.accessible)

    def _local_to(self, a: Addr, tid: int) -> bool:
        owners = [t.tid for t in self.threads.values() if a in t.accessible]
        return owners == [tid]

    def _req_post_local(self, vals: list[tuple[Value, str]], t: _Thread) -> None:
        """Raise for any address value not accessible by exactly ``t``."""
        for v, req_kind in vals:
            if is_addr(v) and not self._local_to(v, t.tid):
                raise _Halt(
                    "requirement-failure", req_kind,
                    f"{v!r} accessible by more than one thread after the statement",
                )

    # -- the step ------------------------------------------------------------

    def _step(self, t: _Thread) -> None:
        unit = self._fetch(t)
        assert unit is not None
        self.step_count += 1
        t.clock[t.tid] = t.clock.get(t.tid, 0) + 1
        if unit[0] == "recheck":
            frame = unit[1]
            loop_instr = frame.loop
            assert loop_instr is not None
            self._cur_label = loop_instr.label
            if self._eval_bool(loop_instr.stmt.cond, t):
                frame.idx = 0
            else:
                t.frames.pop()
            self._record(t, loop_instr.label, "loop recheck")
            return

        instr: InstrStmt = unit[1]
        s = instr.stmt
        self._cur_label = s.label
        frame = t.frames[-1]
        frame.idx += 1  # compound statements push frames after the advance

        if instr.access is not None:
            self._step_access(instr, t)
        elif isinstance(s, CoreAlloc):
            self._step_corealloc(instr, t)
        elif isinstance(s, CoreCall):
            self._step_corecall(instr, t)
        elif isinstance(s, Fork):
            self._step_fork(instr, t)
        else:
            self._exec_ops(instr.pre, t, "OMEGA-" + type(s).__name__.upper())
            if isinstance(s, Skip):
                self._record(t, s.label, "skip")
            elif isinstance(s, HeapAlloc):
                a = self._alloc(KIND_APP, s.label)
                self.heap[a] = None
                self.heap_taint[a] = frozenset()
                t.env[s.x] = a
                t.env_taint[s.x] = frozenset()
                self._record(t, s.label, f"{s.x} := new {a!r}")
            elif isinstance(s, Assign):
                t.env[s.x] = self._eval(s.value, t)
                t.env_taint[s.x] = self._taint_of_expr(s.value, t)
                self._record(t, s.label, f"{s.x} := {t.env[s.x]!r}")
            elif isinstance(s, IoCall):
                self._step_io(s, t)
            elif isinstance(s, Branch):
                if self._eval_bool(s.cond, t):
                    t.frames.append(_Frame(block=instr.sub["then"]))
                else:
                    t.frames.append(_Frame(block=instr.sub["orelse"]))
                self._record(t, s.label, "branch")
            elif isinstance(s, Loop):
                if self._eval_bool(s.cond, t):
                    t.frames.append(_Frame(block=instr.sub["body"], loop=instr))
                self._record(t, s.label, "loop test")
            elif isinstance(s, Callback):
                t.frames.append(_Frame(block=instr.sub["body"], callback=True))
                self._record(t, s.label, f"callback {s.name!r}")
            else:  # pragma: no cover
                raise TypeError(s)
            self._exec_ops(instr.post, t, "OMEGA-" + type(s).__name__.upper())

        # newly bound address values become accessible to the thread
        for v in t.env.values():
            if is_addr(v):
                t.accessible.add(v)

    def _step_access(self, instr: InstrStmt, t: _Thread) -> None:
        plan = instr.access
        assert plan is not None
        s = instr.stmt
        ptr = self._lookup(plan.dispatch_var, t)
        if ptr is None:
            raise _crash(f"nil dereference at {s.label}")
        if not is_addr(ptr):
            raise _crash(f"dereference of non-address value at {s.label}")
        omega = "OMEGA-READ" if isinstance(s, HeapRead) else "OMEGA-WRITE"
        local = ptr in t.slh
        if local:
            self._exec_ops(plan.local_pre, t, omega)
        else:
            self._exec_ops(plan.global_atomic_pre.ops, t, omega)

        # the requirement monitor rejects the write before attempting it
        # (with ghosts present the pre-op failure above always wins)
        if isinstance(s, HeapWrite) and self.req_checks and not self._app_managed(ptr):
            raise _Halt(
                "requirement-failure", "REQ-WRITE",
                f"write through non-app-managed cell {ptr!r}",
            )
        if ptr not in self.heap:
            raise _crash(f"dereference of non-cell address at {s.label}")
        if isinstance(s, HeapRead):
            t.env[s.x] = self.heap[ptr]
            t.env_taint[s.x] = self.heap_taint.get(ptr, frozenset())
            self._record(t, s.label, f"{s.x} := *{s.src} = {t.env[s.x]!r}")
            self.accesses.append(self._access(t, s.label, ptr, write=False, atomic=not local))
        else:
            assert isinstance(s, HeapWrite)
            self.heap[ptr] = self._eval(s.value, t)
            self.heap_taint[ptr] = self._taint_of_expr(s.value, t)
            self._record(t, s.label, f"*{s.target} := {self.heap[ptr]!r}")
            self.accesses.append(self._access(t, s.label, ptr, write=True, atomic=not local))

        if local:
            self._exec_ops(plan.local_post, t, omega)
        else:
            self._exec_ops(plan.global_atomic_post.ops, t, omega)

    def _step_corealloc(self, instr: InstrStmt, t: _Thread) -> None:
        s = instr.stmt
        assert isinstance(s, CoreAlloc)
        arg_vals = [self._lookup(a, t) for a in s.args]
        req_bad = []
        if self.req_checks:
            for v in arg_vals:
                if is_addr(v) and not self._app_managed(v):
                    req_bad.append(("REQ-COREALLOC-ARG", v))
        self._exec_ops(instr.pre, t, "OMEGA-COREALLOC")
        for kind, v in req_bad:
            raise _Halt(
                "requirement-failure", kind,
                f"core_alloc argument {v!r} is not app-managed",
            )
        rid = self._pending_rid
        inst = self._alloc(KIND_INSTANCE, s.label, rid=rid)
        t.env[s.c] = inst
        t.env_taint[s.c] = frozenset()
        self.instance_state[inst] = {}
        inflow: frozenset[str] = frozenset()
        for a, v in zip(s.args, arg_vals):
            if a is not None and a != "nil":
                inflow |= t.env_taint.get(a, frozenset())
            if is_addr(v):
                for cell in sorted(reach_value(v, self.heap), key=lambda x: x.ident):
                    inflow |= self.heap_taint.get(cell, frozenset())
        self.instance_taint[inst] = inflow
        if self.contract is not None and self.contract.alloc is not None:
            self._run_action(self.contract.alloc, inst, arg_vals, t, s.label)
        self._record(t, s.label, f"{s.c} := core_alloc -> {inst!r}")
        self._exec_ops(instr.post, t, "OMEGA-COREALLOC")
        if self.req_checks:
            self._pending_req += [(v, "REQ-COREALLOC-ARG") for v in arg_vals]

    def _step_corecall(self, instr: InstrStmt, t: _Thread) -> None:
        s = instr.stmt
        assert isinstance(s, CoreCall)
        recv = self._lookup(s.recv, t)
        arg_vals = [self._lookup(a, t) for a in s.args]
        req_bad: list[tuple[str, Value]] = []
        if self.req_checks:
            if is_addr(recv) and self._app_managed(recv):
                req_bad.append(("REQ-CORECALL-RECV", recv))
            for v in arg_vals:
                if is_addr(v) and not self._app_managed(v):
                    req_bad.append(("REQ-CORECALL-ARG", v))
        self._exec_ops(instr.pre, t, "OMEGA-CORECALL")
        for kind, v in req_bad:
            msg = (
                f"core_call receiver {v!r} is app-managed"
                if kind == "REQ-CORECALL-RECV"
                else f"core_call argument {v!r} is not app-managed"
            )
            raise _Halt("requirement-failure", kind, msg)
        if recv is None:
            raise _crash(f"core_call on nil receiver at {s.label}")
        if not (is_addr(recv) and recv.kind == KIND_INSTANCE):
            raise _crash(f"core_call on non-instance value at {s.label}")

        api_name = self.prog.core_apis[s.api]
        inflow: frozenset[str] = frozenset()
        for a, v in zip(s.args, arg_vals):
            if a is not None and a != "nil":
                inflow |= t.env_taint.get(a, frozenset())
            if is_addr(v):
                for cell in sorted(reach_value(v, self.heap), key=lambda x: x.ident):
                    inflow |= self.heap_taint.get(cell, frozenset())
        inflow |= self.instance_taint.get(recv, frozenset())
        self.instance_taint[recv] = inflow
        source_tag: frozenset[str] = frozenset()
        if self.taint_config is not None and api_name in self.taint_config.source_apis:
            source_tag = frozenset({f"api:{api_name}@{s.label}"})

        action = None
        if self.contract is not None:
            action = self.contract.apis.get(api_name)
        ret_vals: list[Value] = []
        if action is not None:
            ret_vals = self._run_action(action, recv, arg_vals, t, s.label)
        if len(ret_vals) < len(s.rets):
            for i in range(len(ret_vals), len(s.rets)):
                cell = self._alloc(KIND_RET, ret_site(s.label, i))
                self.heap[cell] = None
                self.heap_taint[cell] = frozenset()
                ret_vals.append(cell)
        for i, r in enumerate(s.rets):
            t.env[r] = ret_vals[i]
            if self.taint_config is not None and (api_name, i) in self.taint_config.sanitizers:
                t.env_taint[r] = source_tag  # pass-through blocked, source tag kept
            else:
                t.env_taint[r] = inflow | source_tag
        self._record(t, s.label, f"core_call {api_name} on {recv!r}")
        self._exec_ops(instr.post, t, "OMEGA-CORECALL")
        if self.req_checks:
            self._pending_req += [(v, "REQ-CORECALL-ARG") for v in arg_vals] + [
                (t.env[r], "REQ-CORECALL-RET") for r in s.rets
            ]

    def _step_fork(self, instr: InstrStmt, t: _Thread) -> None:
        s = instr.stmt
        assert isinstance(s, Fork)
        self._exec_ops(instr.pre, t, "OMEGA-FORK")
        child = _Thread(
            tid=self._next_tid,
            frames=[_Frame(block=instr.sub["body"])],
            env={x: self._lookup(x, t) for x in s.captured},
        )
        child.env_taint = {
            x: t.env_taint.get(x, frozenset()) for x in s.captured
        }
        child.clock = dict(t.clock)
        child.clock[child.tid] = 1
        for v in child.env.values():
            if is_addr(v):
                child.accessible.add(v)
        self._next_tid += 1
        self.threads[child.tid] = child
        self._record(t, s.label, f"fork -> thread {child.tid}")

    def _step_io(self, s: IoCall, t: _Thread) -> None:
        vals = [self._eval(e, t) for e in s.args]
        self.app_ios.append(
            {
                "op": s.op,
                "label": s.label,
                "tid": t.tid,
                "step": self.step_count,
                "caps": list(s.caps),
                "values": [repr(v) for v in vals],
            }
        )
        self._record(t, s.label, f"io {s.op!r}")
        if self.taint_config is None:
            return
        sink_caps = set(s.caps) & set(self.taint_config.sinks)
        if not sink_caps:
            return
        # deep output: a printed address exposes everything reachable from it
        for e, v in zip(s.args, vals):
            taints = self._taint_of_expr(e, t)
            if is_addr(v):
                for cell in sorted(reach_value(v, self.heap), key=lambda x: x.ident):
                    taints |= self.heap_taint.get(cell, frozenset())
            for src in sorted(taints):
                self.flows.append(RuntimeFlow(source=src, sink_label=s.label, value=repr(v)))

    # -- contract execution ---------------------------------------------------

    def _run_action(
        self,
        action: ContractAction,
        inst: Addr,
        arg_vals: list[Value],
        t: _Thread,
        label: str,
    ) -> list[Value]:
        state = self.instance_state.setdefault(inst, {})

        def ev(expr: Any) -> ConcreteTerm:
            if isinstance(expr, list):
                head = expr[0]
                if head == "lit":
                    return expr[1]
                if head == "arg":
                    return self._term_of_value(arg_vals[expr[1]], label)
                if head == "deref_arg":
                    v = arg_vals[expr[1]]
                    if not is_addr(v):
                        raise _crash(f"contract deref of non-address argument at {label}")
                    if v not in self.heap:
                        raise _crash(f"contract deref of non-cell at {label}")
                    return self._term_of_value(self.heap[v], label)
                if head == "state":
                    key = expr[1]
                    if key not in state:
                        raise _crash(f"contract state key {key!r} unset at {label}")
                    return state[key]
                if head == "rid":
                    return inst.rid
                # constructor application
                return (head, tuple(ev(a) for a in expr[1:]))
            raise _crash(f"malformed contract term {expr!r} at {label}")

        for key, expr in action.state:
            state[key] = ev(expr)
        for kind, expr in action.events:
            term = ev(expr)
            rid = inst.rid if inst.rid is not None else -1
            self.events.append(
                Event(kind=kind, rid=rid, term=term, step=self.step_count,
                      tid=t.tid, label=label)
            )
        rets: list[Value] = []
        for expr in action.returns:
            if isinstance(expr, list) and expr and expr[0] == "cell":
                cell = self._alloc(KIND_RET, ret_site(label, len(rets)))
                self.heap[cell] = expr[1] if len(expr) > 1 else None
                self.heap_taint[cell] = frozenset()
                rets.append(cell)
            else:
                v = ev(expr)
                if isinstance(v, tuple):
                    raise _crash(f"contract returned a structured term at {label}")
                rets.append(v)
        return rets

    def _term_of_value(self, v: Value, label: str) -> ConcreteTerm:
        if is_addr(v):
            raise _crash(f"contract lifted an address into a message at {label}")
        return v

    # -- bookkeeping -----------------------------------------------------------

    def _alloc(self, kind: str, site: str, rid: int | None = None) -> Addr:
        a = Addr(ident=self._addr_counter, site=site, kind=kind, rid=rid)
        self._addr_counter += 1
        return a

    def _record(self, t: _Thread, label: str, summary: str) -> None:
        self.trace.append(StepRecord(self.step_count, t.tid, label, summary))

    def _access(self, t: _Thread, label: str, addr: Addr, write: bool, atomic: bool) -> Access:
        clock = tuple(sorted(t.clock.items()))
        return Access(self.step_count, t.tid, label, addr, write, atomic, clock)

    def _reclose_accessible(self) -> None:
        for t in self.threads.values():
            if not t.accessible:
                continue
            closed: set[Addr] = set()
            for a in t.accessible:
                closed |= reach_value(a, self.heap)
            t.accessible = closed

    # -- runtime/static crosscheck ----------------------------------------------

    def _cross(self, kind: str, label: str, detail: str) -> None:
        key = (kind, label, detail)
        if key not in self._cross_seen:
            self._cross_seen.add(key)
            self.cross_violations.append(CrossViolation(kind, label, detail))

    def _crosscheck_step(self, tid: int) -> None:
        assert self.static is not None
        sol, esc, pmap = self.static
        label = self._cur_label

        # (i) every bound address respects the points-to solution
        for t in self.threads.values():
            for x, v in t.env.items():
                if is_addr(v) and v.site not in sol.pts_of(x):
                    self._cross("pts", label, f"{x} holds {v!r}, site not in pts({x})")

        # (ii) heap contents respect the contents relation
        for a, v in self.heap.items():
            if is_addr(v) and v.site not in sol.contents.get(a.site, frozenset()):
                self._cross(
                    "heap-pts", label,
                    f"cell {a!r} holds {v!r}, site not in contents({a.site})",
                )

        # (iv) a multi-accessible cell must have an escaped site
        for t in self.threads.values():
            for a in t.accessible:
                if self._accessible_count(a) > 1 and a.site not in esc.eventually:
                    self._cross(
                        "escape", label,
                        f"{a!r} is multi-accessible but its site never escapes statically",
                    )

        # static locality claims must hold of the values just produced
        t = self.threads[tid]
        defined = _defined_by_label(self.ip.program, label)
        for x in defined:
            v = t.env.get(x)
            if is_addr(v) and esc.is_local(x, label, "post") and not self._local_to(v, tid):
                self._cross(
                    "local-claim", label,
                    f"{x} judged local after {label} but {v!r} is multi-accessible",
                )

        # (iii) ghost-set containment for app-managed accessible cells
        slh_union: dict[Addr, int] = {}
        for th in self.threads.values():
            for a in th.slh:
                slh_union[a] = slh_union.get(a, 0) + 1
        for a in sorted(
            {x for th in self.threads.values() for x in th.accessible},
            key=lambda x: x.ident,
        ):
            if not self._app_managed(a):
                continue
            n = self._accessible_count(a)
            in_slh = slh_union.get(a, 0)
            in_sgh = a in self.sgh
            if n == 1:
                owner = next(
                    th for th in self.threads.values() if a in th.accessible
                )
                if a not in owner.slh or in_sgh or in_slh != 1:
                    self._cross(
                        "ghost-containment", label,
                        f"single-accessible {a!r} not held exactly by its owner's slh",
                    )
            elif n > 1:
                if not in_sgh or in_slh:
                    self._cross(
                        "ghost-containment", label,
                        f"multi-accessible {a!r} not held by sgh alone",
                    )

        # (v) nothing inaccessible lingers in a ghost set
        accessible_all = {x for th in self.threads.values() for x in th.accessible}
        ghost_all = set(self.sgh)
        for th in self.threads.values():
            ghost_all |= th.slh
        for a in sorted(ghost_all - accessible_all, key=lambda x: x.ident):
            self._cross(
                "ghost-absence", label, f"{a!r} in a ghost set but accessible to no thread"
            )


def _expr_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return _expr_vars(e.operand)
    if isinstance(e, Binary):
        return _expr_vars(e.left) | _expr_vars(e.right)
    return set()


def _defined_by_label(prog: Program, label: str) -> list[str]:
    from .lang import walk

    for s in walk(prog.body):
        if s.label != label:
            continue
        if isinstance(s, (HeapAlloc, HeapRead, Assign)):
            return [s.x]
        if isinstance(s, CoreAlloc):
            return [s.c]
        if isinstance(s, CoreCall):
            return list(s.rets)
        return []
    return []


def default_inputs(prog: Program) -> dict[str, Value]:
    """Deterministic scalar values for the declared inputs."""
    return {d.name: 1009 + 97 * i for i, d in enumerate(prog.inputs)}


# ---------------------------------------------------------------------------
# Race detection
# ---------------------------------------------------------------------------


def _hb(a: Access, b: Access) -> bool:
    """a happens-before b per the recorded vector clocks."""
    ca = dict(a.clock)
    cb = dict(b.clock)
    return ca.get(a.tid, 0) <= cb.get(a.tid, 0) and a.step != b.step


def detect_races(accesses: Sequence[Access]) -> list[Race]:
    by_addr: dict[Addr, list[Access]] = {}
    for acc in accesses:
        by_addr.setdefault(acc.addr, []).append(acc)
    seen: set[tuple] = set()
    races: list[Race] = []
    for addr in sorted(by_addr, key=lambda a: a.ident):
        accs = by_addr[addr]
        for i in range(len(accs)):
            for j in range(i + 1, len(accs)):
                a, b = accs[i], accs[j]
                if a.tid == b.tid:
                    continue
                if not (a.write or b.write):
                    continue
                if a.atomic and b.atomic:
                    continue  # shared-bracket accesses exclude each other
                if _hb(a, b) or _hb(b, a):
                    continue
                kinds = f"{'write' if a.write else 'read'}/{'write' if b.write else 'read'}"
                key = (addr.site, a.label, b.label, kinds)
                if key not in seen:
                    seen.add(key)
                    races.append(Race(addr.site, a.label, b.label, kinds))
    return races


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------


@dataclass
class Witness:
    schedule: list[int]
    outcome: Outcome

    def to_dict(self) -> dict:
        return {"schedule": self.schedule, "outcome": self.outcome.to_dict()}


@dataclass
class ExploreReport:
    runs: int
    total_steps: int
    exhaustive: bool
    ok_runs: int
    outcome_counts: dict[str, int]
    failures: dict[str, Witness]  # failure kind -> shortest witness
    races: list[Race]
    flows: list[RuntimeFlow]
    cross_violations: list[CrossViolation]

    @property
    def clean(self) -> bool:
        return not any(
            k.startswith(("OMEGA-", "REQ-")) for k in self.failures
        )

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "total_steps": self.total_steps,
            "exhaustive": self.exhaustive,
            "ok_runs": self.ok_runs,
            "outcome_counts": dict(sorted(self.outcome_counts.items())),
            "failures": {k: w.to_dict() for k, w in sorted(self.failures.items())},
            "races": [r.to_dict() for r in self.races],
            "flows": [f.to_dict() for f in self.flows],
            "cross_violations": [v.to_dict() for v in self.cross_violations],
        }


def explore(
    ip: InstrumentedProgram,
    inputs: dict[str, Value] | None = None,
    contract: Contract | None = None,
    taint_config: TaintConfig | None = None,
    req_checks: bool = True,
    static: tuple[PtsSolution, EscapeMap, PassMap] | None = None,
    max_total_steps: int = 100_000,
    max_steps_per_run: int = 2000,
    max_runs: int | None = None,
) -> ExploreReport:
    """Depth-first exhaustive schedule exploration by prefix replay.

    Every run replays a recorded prefix and then always picks the lowest
    runnable thread id; at each step past the prefix the unexplored sibling
    choices are pushed.  Budgets bound the search; ``exhaustive`` reports
    whether the whole tree was covered.
    """
    stack: list[list[int]] = [[]]
    runs = 0
    total_steps = 0
    ok_runs = 0
    exhaustive = True
    outcome_counts: dict[str, int] = {}
    failures: dict[str, Witness] = {}
    races: list[Race] = []
    seen_races: set[tuple] = set()
    flows: list[RuntimeFlow] = []
    seen_flows: set[tuple] = set()
    cross: list[CrossViolation] = []
    seen_cross: set[tuple] = set()

    while stack:
        if total_steps >= max_total_steps or (max_runs is not None and runs >= max_runs):
            exhaustive = False
            break
        prefix = stack.pop()
        m = Machine(
            ip,
            inputs=inputs,
            contract=contract,
            taint_config=taint_config,
            req_checks=req_checks,
            static=static,
            max_steps=max_steps_per_run,
        )
        res = m.run(prefix)
        runs += 1
        total_steps += res.steps
        status_key = res.outcome.kind or "ok"
        outcome_counts[status_key] = outcome_counts.get(status_key, 0) + 1
        if res.outcome.status == "ok":
            ok_runs += 1
        elif res.outcome.kind not in (None, "CRASH", "BUDGET"):
            kind = res.outcome.kind
            w = failures.get(kind)
            if w is None or (len(res.schedule), res.schedule) < (len(w.schedule), w.schedule):
                failures[kind] = Witness(list(res.schedule), res.outcome)
        elif res.outcome.kind in ("CRASH", "BUDGET"):
            kind = res.outcome.kind
            if kind not in failures:
                failures[kind] = Witness(list(res.schedule), res.outcome)
        if res.outcome.kind == "BUDGET":
            exhaustive = False
        for r in detect_races(res.accesses):
            key = (r.site, r.first_label, r.second_label, r.kinds)
            if key not in seen_races:
                seen_races.add(key)
                races.append(r)
        for f in res.flows:
            key = (f.source, f.sink_label)
            if key not in seen_flows:
                seen_flows.add(key)
                flows.append(f)
        for v in res.cross_violations:
            key = (v.kind, v.label, v.detail)
            if key not in seen_cross:
                seen_cross.add(key)
                cross.append(v)

        # unexplored siblings, deepest first so the search stays depth-first
        for i in range(len(res.schedule) - 1, len(prefix) - 1, -1):
            chosen = res.schedule[i]
            for tid in res.runnable_sets[i]:
                if tid > chosen:
                    stack.append(res.schedule[:i] + [tid])

    return ExploreReport(
        runs=runs,
        total_steps=total_steps,
        exhaustive=exhaustive,
        ok_runs=ok_runs,
        outcome_counts=outcome_counts,
        failures=failures,
        races=sorted(races, key=lambda r: (r.site, r.first_label, r.second_label)),
        flows=sorted(flows, key=lambda f: (f.source, f.sink_label)),
        cross_violations=cross,
    )


def run_once(
    ip: InstrumentedProgram,
    schedule: Sequence[int] = (),
    inputs: dict[str, Value] | None = None,
    contract: Contract | None = None,
    taint_config: TaintConfig | None = None,
    req_checks: bool = True,
    max_steps: int = 2000,
) -> RunResult:
    m = Machine(
        ip,
        inputs=inputs,
        contract=contract,
        taint_config=taint_config,
        req_checks=req_checks,
        max_steps=max_steps,
    )
    return m.run(schedule)


def crosscheck_static(
    prog: Program,
    sol: PtsSolution,
    esc: EscapeMap,
    pmap: PassMap,
    inputs: dict[str, Value] | None = None,
    contract: Contract | None = None,
    max_total_steps: int = 50_000,
    max_steps_per_run: int = 2000,
) -> list[CrossViolation]:
    """Explore the program, validating the static results at every statement
    boundary.  Returns all distinct violations found (empty = consistent)."""
    from .ghost import instrument

    report = explore(
        instrument(prog),
        inputs=inputs,
        contract=contract,
        req_checks=False,
        static=(sol, esc, pmap),
        max_total_steps=max_total_steps,
        max_steps_per_run=max_steps_per_run,
    )
    return sorted(
        report.cross_violations, key=lambda v: (v.kind, v.label, v.detail)
    )
