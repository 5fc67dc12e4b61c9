"""Per-statement checks that make the core-isolation argument go through.

Every rule is a static, sufficient condition; nil is always admissible, so
each judgment has the shape "nil or <property>" — a variable with an empty
pts set can only hold nil or a scalar and passes pointer judgments
vacuously.

Rule identifiers:

* C1 — instance provenance: a core-call receiver may point only to sites
  that are corealloc returns observed exclusively through the return value.
* C2 — no modification: application writes must not touch core-instance
  state, even through an alias.
* C3 — confinement: core-instance references are passed only to core
  statements (not stored to heap, not passed as data arguments, not handed
  to io).
* C4 — thread locality of instances: the receiver is local at the call, and
  no core call occurs in a forked body that captured an instance.
* C5 — no core invocation from application callbacks.
* C6 — core-call data arguments (and returns) are local around the call.
* C7 — data arguments of one call are pairwise non-aliasing.
* C8 — application reads touch only application-managed memory.

SHALLOW and CAPTURE reuse the validator's findings; OMEGA-* identifiers
name the *runtime* images of these conditions and are emitted by the
interpreter, not by this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .escape import EscapeMap
from .lang import (
    Branch,
    Callback,
    CoreAlloc,
    CoreCall,
    Fork,
    HeapRead,
    HeapWrite,
    IoCall,
    Loop,
    Program,
    Stmt,
    Var,
    free_vars,
    validate_program,
    walk,
)
from .passthrough import PassMap
from .points_to import PtsSolution, disjoint_args, reach_static

@dataclass(frozen=True)
class Rule:
    rule: str
    summary: str


RULES = (
    Rule("C1", "core-call receivers come only from corealloc returns"),
    Rule("C2", "application code never writes core-instance state"),
    Rule("C3", "instance references flow only into core statements"),
    Rule("C4", "instances stay on the thread that created them"),
    Rule("C5", "no core invocation inside application callbacks"),
    Rule("C6", "core-call data arguments and returns are thread-local"),
    Rule("C7", "data arguments of one call are pairwise non-aliasing"),
    Rule("C8", "application reads touch only application-managed memory"),
    Rule("SHALLOW", "core-call arguments point to cells free of inner pointers"),
    Rule("CAPTURE", "forked bodies use only explicitly captured variables"),
    Rule("OMEGA-READ", "runtime: read permission missing (reported by the interpreter)"),
    Rule("OMEGA-WRITE", "runtime: write permission missing (reported by the interpreter)"),
    Rule("OMEGA-COREALLOC", "runtime: corealloc argument accounting failed"),
    Rule("OMEGA-CORECALL", "runtime: corecall receiver/argument accounting failed"),
)

RULE_IDS = tuple(r.rule for r in RULES)


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    label: str
    message: str
    severity: str = "error"

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "label": self.label,
            "message": self.message,
            "severity": self.severity,
        }


def _label_key(label: str):
    return (len(label), label)


def check_conditions(
    prog: Program, sol: PtsSolution, esc: EscapeMap, pmap: PassMap
) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    instance_sites = sol.instance_sites()

    def emit(rule: str, label: str, message: str) -> None:
        diags.append(Diagnostic(rule=rule, label=label, message=message))

    def instance_hit(var: str) -> set[str]:
        if var == "nil":
            return set()
        return sol.pts_of(var) & instance_sites

    def check_data_args(s: CoreAlloc | CoreCall) -> None:
        args = [a for a in s.args if a != "nil"]
        for i, j, ok in disjoint_args(sol, s.args):
            if not ok:
                emit(
                    "C7",
                    s.label,
                    f"arguments {s.args[i]!r} and {s.args[j]!r} may alias "
                    f"(shared allocation site)",
                )
        for a in args:
            if not esc.is_local(a, s.label, "post"):
                emit(
                    "C6",
                    s.label,
                    f"argument {a!r} is not thread-local after the call",
                )
            for site in sorted(sol.pts_of(a)):
                if not pmap.app_managed(site):
                    emit(
                        "C3",
                        s.label,
                        f"argument {a!r} may pass a core-instance reference "
                        f"(site {site}) as data",
                    )

    def visit(body: list[Stmt], in_callback: bool, fork_instances: bool) -> None:
        for s in body:
            if isinstance(s, HeapRead):
                for site in sorted(sol.pts_of(s.src)):
                    if not pmap.app_managed(site):
                        emit(
                            "C8",
                            s.label,
                            f"read through {s.src!r} may touch non-application "
                            f"memory (site {site})",
                        )
            elif isinstance(s, HeapWrite):
                for site in sorted(sol.pts_of(s.target)):
                    if not pmap.app_managed(site):
                        emit(
                            "C2",
                            s.label,
                            f"write through {s.target!r} may modify core-instance "
                            f"state (site {site})",
                        )
                if isinstance(s.value, Var):
                    for site in sorted(instance_hit(s.value.name)):
                        emit(
                            "C3",
                            s.label,
                            f"core-instance reference {s.value.name!r} "
                            f"(site {site}) stored to the heap",
                        )
            elif isinstance(s, CoreAlloc):
                if in_callback:
                    emit("C5", s.label, "core API invoked from an application callback")
                check_data_args(s)
            elif isinstance(s, CoreCall):
                if in_callback:
                    emit("C5", s.label, "core API invoked from an application callback")
                check_data_args(s)
                for site in sorted(sol.pts_of(s.recv)):
                    if not pmap.is_pt_core(site):
                        emit(
                            "C1",
                            s.label,
                            f"receiver {s.recv!r} may point to {site}, which is not "
                            f"exclusively a corealloc return",
                        )
                if not esc.is_local(s.recv, s.label, "pre"):
                    emit(
                        "C4",
                        s.label,
                        f"receiver {s.recv!r} may be accessible by another thread",
                    )
                if fork_instances:
                    emit(
                        "C4",
                        s.label,
                        "core call inside a forked body whose captures reach a "
                        "core instance",
                    )
                for r in s.rets:
                    if not esc.is_local(r, s.label, "post"):
                        emit(
                            "C6",
                            s.label,
                            f"return {r!r} is not thread-local after the call",
                        )
            elif isinstance(s, IoCall):
                for e in s.args:
                    for y in sorted(free_vars(e)):
                        for site in sorted(instance_hit(y)):
                            emit(
                                "C3",
                                s.label,
                                f"core-instance reference {y!r} (site {site}) "
                                f"passed to io {s.op!r}",
                            )
            elif isinstance(s, Fork):
                captured_sites: set[str] = set()
                for name in s.captured:
                    captured_sites |= sol.pts_of(name)
                captures_instance = bool(
                    reach_static(sol, captured_sites) & instance_sites
                )
                visit(s.body, in_callback, fork_instances or captures_instance)
            elif isinstance(s, Branch):
                visit(s.then, in_callback, fork_instances)
                visit(s.orelse, in_callback, fork_instances)
            elif isinstance(s, Loop):
                visit(s.body, in_callback, fork_instances)
            elif isinstance(s, Callback):
                visit(s.body, True, fork_instances)

    visit(prog.body, False, False)

    for issue in validate_program(prog):
        if issue.kind == "shallow":
            emit("SHALLOW", issue.label, issue.message)
        elif issue.kind == "capture":
            emit("CAPTURE", issue.label, issue.message)

    diags.sort(key=lambda d: (_label_key(d.label), d.rule, d.message))
    return diags


def to_json(diags: list[Diagnostic]) -> str:
    return json.dumps([d.to_dict() for d in diags], indent=2)


def exit_code(diags: list[Diagnostic]) -> int:
    return 1 if any(d.severity == "error" for d in diags) else 0
