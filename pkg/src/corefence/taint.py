"""Whole-program taint analysis for I/O independence.

Secrets enter at secret-tagged program inputs and at declared key-generating
core APIs; they must never reach the arguments of a sink-tagged io call, and
branching on them is flagged unless the branch label is allow-listed.

The analysis is a forward propagation over an explicit dataflow graph:
variable copies, loads and stores through pts-resolved cells, and core
boundary crossings (arguments and instance state flow into non-sanitized
returns).  A sanitizer entry (api name, return index) declares that the
protocol model already permits the corresponding virtual output, so the
returned value is clean by refinement rather than by dataflow.

Cross-thread flows through shared cells are propagated by default (sound).
Setting ``ignore_fork_taint`` keys every cell by the thread scope that
accesses it, replicating the common tool configuration that accepts
unsoundness to cut false positives; this is a documented trade-off switch,
not the default.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .lang import (
    Assign,
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
    free_vars,
    walk,
)
from .points_to import KIND_INSTANCE, PtsSolution, reach_static

SINK_CAPS = ("fs_write", "net_write", "os_state", "syscall", "exec")


class TaintConfigError(ValueError):
    pass


@dataclass
class TaintConfig:
    source_apis: frozenset[str] = frozenset()
    sinks: frozenset[str] = frozenset(SINK_CAPS)
    sanitizers: frozenset[tuple[str, int]] = frozenset()
    branch_allow: frozenset[str] = frozenset()
    ignore_fork_taint: bool = False

    @classmethod
    def from_json(cls, text: str) -> "TaintConfig":
        doc = json.loads(text)
        sinks = frozenset(doc.get("sinks", SINK_CAPS))
        unknown = sinks - frozenset(SINK_CAPS)
        if unknown:
            raise TaintConfigError(f"unknown sink capability tags: {sorted(unknown)}")
        sanitizers = frozenset(
            (str(name), int(idx)) for name, idx in doc.get("sanitizers", [])
        )
        return cls(
            source_apis=frozenset(doc.get("sources", {}).get("apis", [])),
            sinks=sinks,
            sanitizers=sanitizers,
            branch_allow=frozenset(doc.get("branch_allow", [])),
            ignore_fork_taint=bool(doc.get("ignore_fork_taint", False)),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "sources": {"apis": sorted(self.source_apis)},
                "sinks": sorted(self.sinks),
                "sanitizers": [list(s) for s in sorted(self.sanitizers)],
                "branch_allow": sorted(self.branch_allow),
                "ignore_fork_taint": self.ignore_fork_taint,
            },
            indent=2,
        )


@dataclass(frozen=True)
class Flow:
    source: str
    sink: str  # io statement label
    path: list[str] = field(default_factory=list, compare=False, hash=False)


@dataclass
class TaintReport:
    flows: list[Flow] = field(default_factory=list)
    branch_violations: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "pass" if not self.flows and not self.branch_violations else "fail"

    def to_json(self) -> str:
        return json.dumps(
            {
                "verdict": self.verdict,
                "flows": [
                    {"source": f.source, "sink": f.sink, "path": f.path}
                    for f in self.flows
                ],
                "branch_violations": [
                    {"label": lab, "sources": list(srcs)}
                    for lab, srcs in self.branch_violations
                ],
            },
            indent=2,
        )


def _label_key(label: str):
    return (len(label), label)


def compute_taint(prog: Program, cfg: TaintConfig, sol: PtsSolution) -> TaintReport:
    api_names = set(prog.core_apis.values())
    unknown = (cfg.source_apis | {name for name, _ in cfg.sanitizers}) - api_names
    if unknown:
        raise TaintConfigError(f"config references unknown op names: {sorted(unknown)}")

    instance_sites = sol.instance_sites()

    def cell_key(site: str, scope: str):
        if cfg.ignore_fork_taint:
            return ("cell", site, scope)
        return ("cell", site)

    # edges: (src_node, dst_node, statement label); seeds: node -> sources
    edges: list[tuple[tuple, tuple, str]] = []
    seeds: dict[tuple, set[str]] = {}
    sink_stmts: list[tuple[IoCall, str]] = []  # (stmt, scope)
    cond_stmts: list[Stmt] = []

    def seed(node: tuple, source: str) -> None:
        seeds.setdefault(node, set()).add(source)

    def arg_inflow_nodes(arg: str, scope: str) -> list[tuple]:
        if arg == "nil":
            return []
        nodes: list[tuple] = [("var", arg)]
        for a in sorted(reach_static(sol, sol.pts_of(arg))):
            nodes.append(cell_key(a, scope))
        return nodes

    def visit(body: list[Stmt], scope: str) -> None:
        for s in body:
            if isinstance(s, Assign):
                for y in sorted(free_vars(s.value)):
                    edges.append((("var", y), ("var", s.x), s.label))
            elif isinstance(s, HeapRead):
                for a in sorted(sol.pts_of(s.src)):
                    edges.append((cell_key(a, scope), ("var", s.x), s.label))
            elif isinstance(s, HeapWrite):
                for y in sorted(free_vars(s.value)):
                    for a in sorted(sol.pts_of(s.target)):
                        edges.append((("var", y), cell_key(a, scope), s.label))
            elif isinstance(s, CoreAlloc):
                core_node = ("core", s.label)
                for arg in s.args:
                    for node in arg_inflow_nodes(arg, scope):
                        edges.append((node, core_node, s.label))
            elif isinstance(s, CoreCall):
                api_name = prog.core_apis.get(s.api, "?")
                core_nodes = [
                    ("core", site)
                    for site in sorted(sol.pts_of(s.recv) & instance_sites)
                ]
                inflow: list[tuple] = []
                for arg in s.args:
                    inflow.extend(arg_inflow_nodes(arg, scope))
                for node in inflow:
                    for cn in core_nodes:
                        edges.append((node, cn, s.label))
                for i, r in enumerate(s.rets):
                    if (api_name, i) in cfg.sanitizers:
                        continue
                    for cn in core_nodes:
                        edges.append((cn, ("var", r), s.label))
                    for node in inflow:
                        edges.append((node, ("var", r), s.label))
                if api_name in cfg.source_apis:
                    for r in s.rets:
                        seed(("var", r), f"api:{api_name}@{s.label}")
            elif isinstance(s, IoCall):
                if set(s.caps) & cfg.sinks:
                    sink_stmts.append((s, scope))
            elif isinstance(s, Fork):
                visit(s.body, s.label)
            elif isinstance(s, Branch):
                cond_stmts.append(s)
                visit(s.then, scope)
                visit(s.orelse, scope)
            elif isinstance(s, Loop):
                cond_stmts.append(s)
                visit(s.body, scope)
            elif isinstance(s, Callback):
                visit(s.body, scope)

    for d in prog.inputs:
        if d.secret:
            seed(("var", d.name), f"input:{d.name}")
    visit(prog.body, "main")

    # fixpoint propagation
    taint: dict[tuple, set[str]] = {n: set(srcs) for n, srcs in seeds.items()}
    changed = True
    while changed:
        changed = False
        for src_node, dst_node, _ in edges:
            have = taint.get(src_node)
            if not have:
                continue
            got = taint.setdefault(dst_node, set())
            if not have <= got:
                got |= have
                changed = True

    # witness reconstruction: shortest edge-label path from a seed of the
    # given source to the target node
    adjacency: dict[tuple, list[tuple[tuple, str]]] = {}
    for src_node, dst_node, label in edges:
        adjacency.setdefault(src_node, []).append((dst_node, label))

    def witness(source: str, targets: set[tuple]) -> list[str]:
        start_nodes = [n for n, srcs in seeds.items() if source in srcs]
        parents: dict[tuple, tuple[tuple, str] | None] = {n: None for n in start_nodes}
        queue = deque(start_nodes)
        goal = None
        for n in start_nodes:
            if n in targets:
                goal = n
        while queue and goal is None:
            node = queue.popleft()
            for nxt, label in adjacency.get(node, []):
                if nxt in parents:
                    continue
                parents[nxt] = (node, label)
                if nxt in targets:
                    goal = nxt
                    break
                queue.append(nxt)
        if goal is None:
            return []
        path: list[str] = []
        cur = goal
        while parents[cur] is not None:
            prev, label = parents[cur]  # type: ignore[misc]
            path.append(label)
            cur = prev
        return list(reversed(path))

    flows: list[Flow] = []
    for stmt, scope in sink_stmts:
        contributing: dict[str, set[tuple]] = {}
        for e in stmt.args:
            for y in sorted(free_vars(e)):
                nodes = [("var", y)]
                for a in sorted(reach_static(sol, sol.pts_of(y))):
                    nodes.append(cell_key(a, scope))
                for node in nodes:
                    for source in taint.get(node, ()):  # noqa: B905
                        contributing.setdefault(source, set()).add(node)
        for source in sorted(contributing):
            path = witness(source, contributing[source]) + [stmt.label]
            flows.append(Flow(source=source, sink=stmt.label, path=path))

    flows.sort(key=lambda f: (f.source, _label_key(f.sink)))

    branch_violations: list[tuple[str, tuple[str, ...]]] = []
    for s in cond_stmts:
        if s.label in cfg.branch_allow:
            continue
        hit: set[str] = set()
        for y in free_vars(s.cond):
            hit |= taint.get(("var", y), set())
        if hit:
            branch_violations.append((s.label, tuple(sorted(hit))))
    branch_violations.sort(key=lambda bv: _label_key(bv[0]))

    return TaintReport(flows=flows, branch_violations=branch_violations)
