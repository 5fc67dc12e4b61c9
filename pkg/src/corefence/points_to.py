"""Flow-insensitive, allocation-site-based may-point-to analysis.

Inclusion-constraint style: each allocation statement introduces a site
named by its label; copies, loads, and stores generate subset constraints
solved to a least fixpoint.  Values returned from the protocol core are
summarized by one synthetic site per (call label, return index), written
``L7#r0``; those cells are opaque to the application, so their contents
stay empty (core arguments are shallow by language rule).

The result over-approximates: on every concrete trace, a non-nil variable's
cell was allocated at one of the sites in its pts set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .lang import (
    Assign,
    CoreAlloc,
    CoreCall,
    HeapAlloc,
    HeapRead,
    HeapWrite,
    Program,
    Var,
    walk,
)

KIND_APP = "app"
KIND_INSTANCE = "instance"  # fresh core instance from core_alloc
KIND_RET = "ret"  # summary site for a core_call return


def ret_site(call_label: str, index: int) -> str:
    return f"{call_label}#r{index}"


@dataclass
class PtsSolution:
    pts: dict[str, set[str]] = field(default_factory=dict)
    contents: dict[str, set[str]] = field(default_factory=dict)
    site_kinds: dict[str, str] = field(default_factory=dict)

    def pts_of(self, var: str) -> set[str]:
        return self.pts.get(var, set())

    def instance_sites(self) -> set[str]:
        return {s for s, k in self.site_kinds.items() if k == KIND_INSTANCE}


def compute_points_to(prog: Program) -> PtsSolution:
    pts: dict[str, set[str]] = {}
    contents: dict[str, set[str]] = {}
    site_kinds: dict[str, str] = {}
    # subset edges: pts(src) flows into pts(dst)
    copies: list[tuple[str, str]] = []
    loads: list[tuple[str, str]] = []  # (pointer var, destination var)
    stores: list[tuple[str, str]] = []  # (pointer var, source var)

    def pset(v: str) -> set[str]:
        return pts.setdefault(v, set())

    for s in walk(prog.body):
        if isinstance(s, HeapAlloc):
            pset(s.x).add(s.label)
            site_kinds[s.label] = KIND_APP
            contents.setdefault(s.label, set())
        elif isinstance(s, Assign):
            if isinstance(s.value, Var):
                copies.append((s.value.name, s.x))
            pset(s.x)
        elif isinstance(s, HeapRead):
            loads.append((s.src, s.x))
            pset(s.x)
        elif isinstance(s, HeapWrite):
            if isinstance(s.value, Var):
                stores.append((s.target, s.value.name))
        elif isinstance(s, CoreAlloc):
            pset(s.c).add(s.label)
            site_kinds[s.label] = KIND_INSTANCE
            contents.setdefault(s.label, set())
        elif isinstance(s, CoreCall):
            for i, r in enumerate(s.rets):
                site = ret_site(s.label, i)
                pset(r).add(site)
                site_kinds[site] = KIND_RET
                contents.setdefault(site, set())

    changed = True
    while changed:
        changed = False
        for src, dst in copies:
            new = pset(src) - pset(dst)
            if new:
                pset(dst).update(new)
                changed = True
        for ptr, dst in loads:
            for a in sorted(pset(ptr)):
                new = contents.setdefault(a, set()) - pset(dst)
                if new:
                    pset(dst).update(new)
                    changed = True
        for ptr, src in stores:
            for a in sorted(pset(ptr)):
                cell = contents.setdefault(a, set())
                new = pset(src) - cell
                if new:
                    cell.update(new)
                    changed = True

    return PtsSolution(pts=pts, contents=contents, site_kinds=site_kinds)


def reach_static(sol: PtsSolution, sites: set[str]) -> set[str]:
    """Closure of a site set under cell contents (static image of reach)."""
    out = set(sites)
    frontier = list(sites)
    while frontier:
        site = frontier.pop()
        for nxt in sol.contents.get(site, set()):
            if nxt not in out:
                out.add(nxt)
                frontier.append(nxt)
    return out


def disjoint_args(sol: PtsSolution, args: list[str]) -> list[tuple[int, int, bool]]:
    """Per-pair may-alias verdict for core-call arguments.

    Pair (i, j) is judged disjoint iff the pts sets do not intersect;
    a shared site means the two arguments may name the same cell at
    runtime (identical variables are the degenerate case).  ``nil``
    arguments have empty pts and are disjoint from everything.
    """
    verdicts = []
    for i in range(len(args)):
        for j in range(i + 1, len(args)):
            a = sol.pts.get(args[i], set()) if args[i] != "nil" else set()
            b = sol.pts.get(args[j], set()) if args[j] != "nil" else set()
            verdicts.append((i, j, not (a & b)))
    return verdicts


def to_json(sol: PtsSolution) -> str:
    doc = {var: sorted(sites) for var, sites in sorted(sol.pts.items())}
    return json.dumps(doc, indent=2, sort_keys=True)
