"""Trace refinement: concrete per-instance I/O against a role's I/O automaton.

The interpreter attributes every boundary event (network ``in``/``out``,
application-side ``vin``/``vout``) to the core instance that performed it.
This module groups those events per instance, lifts the concrete payloads
into the symbolic term algebra, and simulates the role automaton extracted
by ``msr.role_iospec`` over each instance's event sequence.

An instance is accepted when every one of its events, in schedule order,
matches an enabled transition.  Values carried through the role's state fact
are bound on first use and must stay consistent for the rest of that
instance's run, so a key learned at initialization constrains every later
packet; a rule's own variables rebind at each firing, so a loop iteration
carries fresh payloads under the same session bindings.  The simulation
keeps the
full set of reachable (state, binding) configurations, which makes
acceptance independent of tie-breaking between overlapping transitions and
gives the checker two structural properties for free: every prefix of an
accepted trace is accepted, and appending events never turns a rejection
back into an acceptance.

Each instance gets one automaton run and therefore the I/O permissions of
exactly one role execution; loops the role itself permits (e.g. a transport
phase) are loops in the automaton, not replays of the run.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from .msr import (
    FUNCTIONS,
    App,
    IOAutomaton,
    IOTransition,
    Name,
    Pub,
    Term,
    match_term,
    normalize,
    render_term,
)


class RefinementError(ValueError):
    pass


EVENT_KINDS = ("vin", "vout", "in", "out")


# --------------------------------------------------------------------------
# lifting concrete event payloads into the term algebra


def term_of_value(v: object) -> Term:
    """Lift an interpreter event payload into a symbolic term.

    Integers become fresh-style names (runtime-generated values: keys,
    nonces, message bodies), strings become public constants (identities,
    protocol tags), ``None`` becomes the public constant ``nil``, and
    constructor tuples map onto the function symbols of the algebra.
    """
    if v is None:
        return Pub("nil")
    if isinstance(v, bool):
        raise RefinementError(f"cannot lift event value {v!r} into a term")
    if isinstance(v, int):
        return Name("v", v)
    if isinstance(v, str):
        return Pub(v)
    if isinstance(v, tuple) and len(v) == 2 and isinstance(v[0], str):
        fn, args = v
        arity = FUNCTIONS.get(fn)
        if arity is None:
            raise RefinementError(f"unknown function {fn!r} in event payload")
        if arity != len(args):
            raise RefinementError(
                f"{fn} expects {arity} arguments, got {len(args)} in event payload"
            )
        return App(fn, tuple(term_of_value(a) for a in args))
    raise RefinementError(f"cannot lift event value {v!r} into a term")


# --------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceEvent:
    kind: str  # vin | vout | in | out
    term: Term  # normalized
    step: int = 0
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "term": render_term(self.term),
            "step": self.step,
            "label": self.label,
        }


@dataclass(frozen=True)
class CoreTrace:
    """Per-instance boundary events, each instance's list in schedule order."""

    events: Mapping[int, tuple[TraceEvent, ...]]

    def rids(self) -> tuple[int, ...]:
        return tuple(sorted(self.events))

    def to_dict(self) -> dict:
        return {
            str(rid): [ev.to_dict() for ev in evs]
            for rid, evs in sorted(self.events.items())
        }


def core_trace(events: Iterable[object]) -> CoreTrace:
    """Group interpreter boundary events by instance.

    Accepts the ``events`` list of an interpreter run (objects carrying
    ``kind``/``rid``/``term``/``step``/``label``).  The input list is in
    execution order, so per-instance order is schedule order.
    """
    by_rid: dict[int, list[TraceEvent]] = {}
    for ev in events:
        if ev.kind not in EVENT_KINDS:
            raise RefinementError(f"unknown event kind {ev.kind!r}")
        by_rid.setdefault(ev.rid, []).append(
            TraceEvent(
                kind=ev.kind,
                term=normalize(term_of_value(ev.term)),
                step=ev.step,
                label=ev.label,
            )
        )
    return CoreTrace(events={rid: tuple(evs) for rid, evs in by_rid.items()})


# --------------------------------------------------------------------------
# the checker


@dataclass(frozen=True)
class RidVerdict:
    rid: int
    ok: bool
    consumed: int  # events matched; equals the event count iff accepted
    mismatch_index: int | None
    expected: tuple[dict, ...]  # transitions enabled where the run got stuck
    rules: tuple[str, ...]  # one accepting path (or surviving prefix path)

    def to_dict(self) -> dict:
        return {
            "rid": self.rid,
            "ok": self.ok,
            "consumed": self.consumed,
            "mismatch_index": self.mismatch_index,
            "expected": [dict(e) for e in self.expected],
            "rules": list(self.rules),
        }


@dataclass(frozen=True)
class RefinementVerdict:
    role: str
    ok: bool
    rids: tuple[RidVerdict, ...]

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "ok": self.ok,
            "rids": [v.to_dict() for v in self.rids],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _binding_key(env: Mapping[str, Term]) -> frozenset:
    return frozenset(env.items())


def check_refinement(tr: CoreTrace, a: IOAutomaton) -> RefinementVerdict:
    """Check every instance's event sequence against the role automaton.

    The trace and the automaton must agree on the event alphabet: every
    event kind the trace uses must appear as a transition direction
    somewhere in the automaton, and every transition must carry a single
    pattern (one payload per event), or the pair is rejected outright as an
    alphabet mismatch rather than judged per event.
    """
    for t in a.transitions:
        if len(t.event.patterns) != 1:
            raise RefinementError(
                f"alphabet mismatch: transition {t.rule} carries "
                f"{len(t.event.patterns)} payload patterns, events carry one"
            )
    directions = {t.event.direction for t in a.transitions}
    used = {ev.kind for evs in tr.events.values() for ev in evs}
    if not used <= directions:
        missing = ", ".join(sorted(used - directions))
        raise RefinementError(
            f"alphabet mismatch: trace uses {missing} events, "
            f"automaton {a.role!r} has no such transitions"
        )

    verdicts = tuple(
        _check_rid(rid, tr.events[rid], a) for rid in sorted(tr.events)
    )
    return RefinementVerdict(
        role=a.role, ok=all(v.ok for v in verdicts), rids=verdicts
    )


def _check_rid(rid: int, evs: tuple[TraceEvent, ...], a: IOAutomaton) -> RidVerdict:
    # Set-of-configurations simulation: (state, binding, path taken).  The
    # binding is this instance's environment; dedup on (state, binding) keeps
    # the frontier small while preserving acceptance.
    configs: list[tuple[str, dict[str, Term], tuple[str, ...]]] = [(a.initial, {}, ())]
    for i, ev in enumerate(evs):
        nxt: list[tuple[str, dict[str, Term], tuple[str, ...]]] = []
        seen: set[tuple[str, frozenset]] = set()
        for state, env, path in configs:
            for t in a.transitions_from(state):
                if t.event.direction != ev.kind:
                    continue
                # entering a rule's chain releases that rule's own variables:
                # a new firing instantiates them afresh, while state-carried
                # bindings stay pinned for the whole run
                base = (
                    {k: v for k, v in env.items() if k not in t.fresh}
                    if t.fresh
                    else env
                )
                ext = match_term(normalize(t.event.patterns[0]), ev.term, base)
                if ext is None:
                    continue
                key = (t.dst, _binding_key(ext))
                if key not in seen:
                    seen.add(key)
                    nxt.append((t.dst, ext, path + (t.rule,)))
        if not nxt:
            expected = _expected(configs, a)
            return RidVerdict(
                rid=rid,
                ok=False,
                consumed=i,
                mismatch_index=i,
                expected=expected,
                rules=configs[0][2],
            )
        configs = nxt
    return RidVerdict(
        rid=rid,
        ok=True,
        consumed=len(evs),
        mismatch_index=None,
        expected=(),
        rules=configs[0][2],
    )


def _expected(
    configs: list[tuple[str, dict[str, Term], tuple[str, ...]]], a: IOAutomaton
) -> tuple[dict, ...]:
    out: list[dict] = []
    seen: set[tuple[str, str]] = set()
    for state, _env, _path in configs:
        for t in a.transitions_from(state):
            key = (t.src, t.rule + ":" + t.dst)
            if key not in seen:
                seen.add(key)
                out.append(t.to_dict())
    return tuple(out)


def refine_events(events: Iterable[object], a: IOAutomaton) -> RefinementVerdict:
    """Convenience: lift interpreter events and check them in one step."""
    return check_refinement(core_trace(events), a)
