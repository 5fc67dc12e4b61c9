"""Classify allocation sites by how the application obtained them.

Three kinds of sites exist: application allocations (``new()``), core
instances (the return of ``core_alloc``), and core-call return summaries.
The pass-through flags capture *exclusivity*: ``pt_core`` holds for an
instance site only if the application can observe that address exclusively
through the corealloc return value — variable-to-variable copies preserve
this, storing the reference into any heap cell destroys it, because the
address then has a second access path whose provenance the analyses cannot
track.  ``pt_ret`` is the same notion for call-return summary sites.

``app_managed`` is the inclusive classification used by the memory-access
conditions: a location the application may freely touch, either because the
application allocated it or because the core handed it over through a
return parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .lang import Program
from .points_to import KIND_APP, KIND_INSTANCE, KIND_RET, PtsSolution


@dataclass
class PassMap:
    pt_core: dict[str, bool] = field(default_factory=dict)
    pt_ret: dict[str, bool] = field(default_factory=dict)
    kinds: dict[str, str] = field(default_factory=dict)

    def app_managed(self, site: str) -> bool:
        kind = self.kinds.get(site)
        return kind == KIND_APP or kind == KIND_RET

    def is_pt_core(self, site: str) -> bool:
        return self.pt_core.get(site, False)


def compute_passthrough(prog: Program, sol: PtsSolution) -> PassMap:
    stored: set[str] = set()
    for cell_contents in sol.contents.values():
        stored |= cell_contents

    out = PassMap(kinds=dict(sol.site_kinds))
    for site, kind in sol.site_kinds.items():
        if kind == KIND_INSTANCE:
            out.pt_core[site] = site not in stored
        elif kind == KIND_RET:
            out.pt_ret[site] = site not in stored
    return out


def to_json(out: PassMap) -> str:
    doc = {
        site: {
            "kind": out.kinds[site],
            "pt_core": out.pt_core.get(site, False),
            "pt_ret": out.pt_ret.get(site, False),
            "app_managed": out.app_managed(site),
        }
        for site in sorted(out.kinds)
    }
    return json.dumps(doc, indent=2, sort_keys=True)
