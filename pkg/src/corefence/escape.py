"""Flow-sensitive thread-escape analysis over allocation sites.

A site is *escaped* at a program point if, on some path there, it was made
reachable by a second thread: captured by a fork (directly or transitively
through cells), stored into a cell whose site already escaped, or reachable
from an escaped site.  The escaped set is kept closed under static
reachability — if a site is escaped, everything its cells may hold is too —
which is the analysis-level image of reverse transitivity of locality.

``local(x, p)`` then holds iff no site x may point to is escaped at p.
Variables with empty pts (nil or scalar values) are trivially local: every
judgment downstream has the shape "nil or <property>".

Fork bodies are analyzed against the *eventually-escaped* set (the global
fixpoint over all statements anywhere): a child thread runs concurrently
with everything after its spawn, so any site the parent ever shares must be
treated as shared throughout the child.  The spawning thread itself keeps
full flow-sensitivity — before the fork statement executes, the child does
not exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lang import (
    Branch,
    Callback,
    CoreAlloc,
    CoreCall,
    Fork,
    HeapWrite,
    Loop,
    Program,
    Stmt,
    Var,
    walk,
)
from .points_to import PtsSolution, reach_static


@dataclass
class EscapeMap:
    pre: dict[str, frozenset[str]] = field(default_factory=dict)
    post: dict[str, frozenset[str]] = field(default_factory=dict)
    eventually: frozenset[str] = frozenset()
    _pts: PtsSolution | None = None

    def escaped_at(self, label: str, moment: str = "pre") -> frozenset[str]:
        table = self.pre if moment == "pre" else self.post
        return table.get(label, frozenset())

    def is_local(self, var: str, label: str, moment: str = "pre") -> bool:
        if var == "nil":
            return True
        assert self._pts is not None
        return not (self._pts.pts_of(var) & self.escaped_at(label, moment))


def _captured_reach(sol: PtsSolution, captured: list[str]) -> set[str]:
    base: set[str] = set()
    for name in captured:
        base |= sol.pts_of(name)
    return reach_static(sol, base)


def compute_eventually_escaped(prog: Program, sol: PtsSolution) -> frozenset[str]:
    """Global flow-insensitive fixpoint: every site that escapes anywhere."""
    esc: set[str] = set()
    changed = True
    while changed:
        changed = False
        for s in walk(prog.body):
            if isinstance(s, Fork):
                new = _captured_reach(sol, s.captured) - esc
                if new:
                    esc |= new
                    changed = True
            elif isinstance(s, HeapWrite) and isinstance(s.value, Var):
                if sol.pts_of(s.target) & esc:
                    new = reach_static(sol, sol.pts_of(s.value.name)) - esc
                    if new:
                        esc |= new
                        changed = True
        closed = reach_static(sol, esc)
        if closed != esc:
            esc = closed
            changed = True
    return frozenset(esc)


_State = tuple[frozenset[str], frozenset[tuple[str, str]]]  # escaped, store edges


def _reach_via(edges: frozenset[tuple[str, str]], roots: set[str]) -> frozenset[str]:
    out = set(roots)
    frontier = list(roots)
    while frontier:
        a = frontier.pop()
        for x, y in edges:
            if x == a and y not in out:
                out.add(y)
                frontier.append(y)
    return frozenset(out)


def compute_escape(prog: Program, sol: PtsSolution) -> EscapeMap:
    """Flow-sensitive pass.  Alongside the escaped set, the transfer tracks
    which cell-site -> value-site store edges have been executed so far, so
    that escaping a cell drags along only what it may *currently* hold, not
    everything the flow-insensitive contents relation says it will ever
    hold."""
    eventually = compute_eventually_escaped(prog, sol)
    out = EscapeMap(eventually=eventually, _pts=sol)
    all_edges = frozenset(
        (a, b) for a, holds in sol.contents.items() for b in holds
    )

    def transfer(body: list[Stmt], state: _State, record: bool) -> _State:
        esc, edges = state
        for s in body:
            if record:
                out.pre[s.label] = esc
            if isinstance(s, HeapWrite) and isinstance(s.value, Var):
                targets = sol.pts_of(s.target)
                stored = sol.pts_of(s.value.name)
                edges = edges | frozenset(
                    (a, b) for a in targets for b in stored
                )
                if targets & esc:
                    esc = _reach_via(edges, set(esc) | stored)
            elif isinstance(s, Fork):
                base: set[str] = set(esc)
                for name in s.captured:
                    base |= sol.pts_of(name)
                esc = _reach_via(edges, base)
                # what the child's own stores may additionally escape, given
                # what is shared at the spawn point
                esc, edges = transfer(s.body, (esc, edges), record=False)
                if record:
                    # the child runs concurrently with everything the parent
                    # does later, so its own records start from the eventual
                    # fixpoint rather than the spawn-point state
                    transfer(s.body, (eventually, all_edges), record=True)
            elif isinstance(s, Branch):
                esc_t, edges_t = transfer(s.then, (esc, edges), record)
                esc_f, edges_f = transfer(s.orelse, (esc, edges), record)
                esc, edges = esc_t | esc_f, edges_t | edges_f
            elif isinstance(s, Loop):
                state_in: _State = (esc, edges)
                while True:
                    esc_x, edges_x = transfer(s.body, state_in, record)
                    joined: _State = (state_in[0] | esc_x, state_in[1] | edges_x)
                    if joined == state_in:
                        break
                    state_in = joined
                esc, edges = state_in
            elif isinstance(s, Callback):
                esc, edges = transfer(s.body, (esc, edges), record)
            # HeapAlloc/HeapRead/Assign/Skip/IoCall/CoreAlloc/CoreCall do not
            # share memory with other threads
            if record:
                out.post[s.label] = esc
        return esc, edges

    transfer(prog.body, (frozenset(), frozenset()), record=True)
    return out


def to_json_dict(prog: Program, out: EscapeMap, sol: PtsSolution) -> dict:
    """Per-label pre/post escaped sets and local verdicts for pointer vars."""
    pointer_vars = sorted(v for v, sites in sol.pts.items() if sites)
    doc: dict = {}
    for s in walk(prog.body):
        doc[s.label] = {
            "pre_escaped": sorted(out.pre.get(s.label, frozenset())),
            "post_escaped": sorted(out.post.get(s.label, frozenset())),
            "local_pre": {v: out.is_local(v, s.label, "pre") for v in pointer_vars},
            "local_post": {v: out.is_local(v, s.label, "post") for v in pointer_vars},
        }
    return doc
