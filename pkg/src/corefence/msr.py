"""Symbolic protocol engine: multiset rewriting over a cryptographic term algebra.

Terms are normalized against a fixed destructor theory (pair projection,
symmetric and asymmetric decryption, signature verification, one level of
exponent commutation).  Protocol rules rewrite a multiset of facts; the
network attacker is a deduction closure over absorbed outputs (decomposition
during saturation, composition on demand), materialized as explicit deduction
rules only inside attack witnesses, so every reported trace replays step by
step through ``apply_rule``.

Three rule families coexist: parsed model rules, the built-in network-attacker
deduction family (``md_*``), and a per-instance independent deduction family
(``mdind_*`` plus the two ``sync_*`` bridges) whose buffered boundary facts
carry what a single component may learn or emit.  ``simulate_independent``
replays a composed concrete execution in the plain attacker system under the
renaming that collapses per-component knowledge into network knowledge,
checking the two stay in lockstep.

Bounded exploration is breadth-first with canonical state merging (fresh names
renamed by occurrence structure), evaluating secrecy and injective agreement
along the way.  ``role_iospec`` extracts a role's I/O automaton by walking its
state-fact chain symbolically; the refinement checker consumes that automaton.
"""

from __future__ import annotations

import heapq
import itertools
import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field


class MsrError(ValueError):
    pass


class MsrParseError(MsrError):
    pass


# --------------------------------------------------------------------------
# term algebra


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Name:
    """A fresh name; ``idx`` is globally unique, ``label`` is its birth variable."""

    label: str
    idx: int


@dataclass(frozen=True)
class Pub:
    name: str


@dataclass(frozen=True)
class App:
    fn: str
    args: tuple["Term", ...]

    # deep terms are hashed constantly (memo tables, state sorting); caching
    # the structural hash at construction keeps that O(1) per node
    def __post_init__(self) -> None:
        object.__setattr__(self, "_hash", hash((self.fn, self.args)))

    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]


Term = Var | Name | Pub | App

FUNCTIONS: dict[str, int] = {
    "pair": 2,
    "fst": 1,
    "snd": 1,
    "senc": 2,
    "sdec": 2,
    "aenc": 2,
    "adec": 2,
    "sign": 2,
    "verify": 3,
    "pk": 1,
    "h": 1,
    "kdf1": 1,
    "kdf2": 1,
    "exp": 2,
}

G = Pub("g")
OK = Pub("ok")
BUILTIN_PUBS = frozenset({"g", "ok"})


# Memo tables for the hot structural functions.  Terms are immutable and
# hash-cached, so equality-keyed dicts are safe; entries are tiny and the
# term universe of a run is bounded, so the tables are never evicted.
_KEY_MEMO: dict[Term, tuple] = {}
_SHAPE_MEMO: dict[Term, tuple] = {}
_NORM_MEMO: dict[Term, Term] = {}


def term_key(t: Term) -> tuple:
    """Total order on terms; used for canonical sorting and exponent ordering."""
    k = _KEY_MEMO.get(t)
    if k is not None:
        return k
    if isinstance(t, Var):
        k = (0, t.name)
    elif isinstance(t, Pub):
        k = (1, t.name)
    elif isinstance(t, Name):
        k = (2, t.label, t.idx)
    else:
        k = (3, t.fn, tuple(term_key(a) for a in t.args))
    _KEY_MEMO[t] = k
    return k


def term_shape(t: Term) -> tuple:
    """Like term_key but erases fresh-name indices (label kept)."""
    k = _SHAPE_MEMO.get(t)
    if k is not None:
        return k
    if isinstance(t, Name):
        k = (2, t.label)
    elif isinstance(t, App):
        k = (3, t.fn, tuple(term_shape(a) for a in t.args))
    else:
        k = term_key(t)
    _SHAPE_MEMO[t] = k
    return k


_VARS_MEMO: dict[Term, frozenset[str]] = {}
_NO_VARS: frozenset[str] = frozenset()


def term_vars(t: Term) -> frozenset[str]:
    if isinstance(t, Var):
        return frozenset((t.name,))
    if isinstance(t, App):
        out = _VARS_MEMO.get(t)
        if out is None:
            out = _NO_VARS
            for a in t.args:
                out |= term_vars(a)
            _VARS_MEMO[t] = out
        return out
    return _NO_VARS


def names_of(t: Term) -> frozenset[Name]:
    if isinstance(t, Name):
        return frozenset((t,))
    if isinstance(t, App):
        out: frozenset[Name] = frozenset()
        for a in t.args:
            out |= names_of(a)
        return out
    return frozenset()


def is_ground(t: Term) -> bool:
    return not term_vars(t)


def subst(t: Term, binding: Mapping[str, Term]) -> Term:
    """Substitute bound variables; unbound variables are left in place."""
    if isinstance(t, Var):
        return binding.get(t.name, t)
    if isinstance(t, App):
        return App(t.fn, tuple(subst(a, binding) for a in t.args))
    return t


def _reduce_root(t: App) -> Term:
    fn, args = t.fn, t.args
    if fn == "fst" and isinstance(args[0], App) and args[0].fn == "pair":
        return args[0].args[0]
    if fn == "snd" and isinstance(args[0], App) and args[0].fn == "pair":
        return args[0].args[1]
    if fn == "sdec":
        c, k = args
        if isinstance(c, App) and c.fn == "senc" and c.args[1] == k:
            return c.args[0]
    if fn == "adec":
        c, sk = args
        if isinstance(c, App) and c.fn == "aenc":
            ek = c.args[1]
            if isinstance(ek, App) and ek.fn == "pk" and ek.args[0] == sk:
                return c.args[0]
    if fn == "verify":
        sig, m, vk = args
        if (
            isinstance(sig, App)
            and sig.fn == "sign"
            and sig.args[0] == m
            and isinstance(vk, App)
            and vk.fn == "pk"
            and vk.args[0] == sig.args[1]
        ):
            return OK
    if fn == "exp":
        base, e2 = args
        if isinstance(base, App) and base.fn == "exp" and base.args[0] == G:
            e1 = base.args[1]
            # commute exactly one level over base g: order the two exponents
            if term_key(e2) < term_key(e1):
                return App("exp", (App("exp", (G, e2)), e1))
    return t


def normalize(t: Term) -> Term:
    if not isinstance(t, App):
        return t
    n = _NORM_MEMO.get(t)
    if n is None:
        n = _reduce_root(App(t.fn, tuple(normalize(a) for a in t.args)))
        _NORM_MEMO[t] = n
    return n


def match_term(pattern: Term, term: Term, binding: Mapping[str, Term] | None = None) -> dict[str, Term] | None:
    """One-way syntactic match of ``pattern`` against a ground ``term``.

    Returns the extending binding, or None.  Matching is on normalized terms
    and purely structural; the equational theory acts through normalization
    of both sides, not through matching modulo equations.
    """
    b = dict(binding) if binding else {}

    def go(p: Term, t: Term) -> bool:
        if isinstance(p, Var):
            if p.name in b:
                return b[p.name] == t
            b[p.name] = t
            return True
        if isinstance(p, App):
            return (
                isinstance(t, App)
                and p.fn == t.fn
                and all(go(pa, ta) for pa, ta in zip(p.args, t.args))
            )
        return p == t

    return b if go(pattern, term) else None


def unify(t1: Term, t2: Term, binding: Mapping[str, Term] | None = None) -> dict[str, Term] | None:
    """Syntactic unification (with occurs check); used for overlap warnings."""
    b = dict(binding) if binding else {}

    def resolve(t: Term) -> Term:
        while isinstance(t, Var) and t.name in b:
            t = b[t.name]
        return t

    def go(x: Term, y: Term) -> bool:
        x, y = resolve(x), resolve(y)
        if x == y:
            return True
        if isinstance(x, Var):
            if x.name in term_vars(subst(y, b)):
                return False
            b[x.name] = y
            return True
        if isinstance(y, Var):
            return go(y, x)
        if isinstance(x, App) and isinstance(y, App) and x.fn == y.fn:
            return all(go(a, c) for a, c in zip(x.args, y.args))
        return False

    return b if go(t1, t2) else None


def render_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Pub):
        return f"'{t.name}'"
    if isinstance(t, Name):
        return f"~{t.label}.{t.idx}"
    if t.fn == "pair":
        parts = []
        cur: Term = t
        while isinstance(cur, App) and cur.fn == "pair":
            parts.append(render_term(cur.args[0]))
            cur = cur.args[1]
        parts.append(render_term(cur))
        return "<" + ", ".join(parts) + ">"
    return f"{t.fn}(" + ", ".join(render_term(a) for a in t.args) + ")"


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _TermParser:
    def __init__(self, text: str, pubs: frozenset[str], collect: set[str] | None):
        self.text = text
        self.pos = 0
        self.pubs = pubs
        self.collect = collect

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, ch: str) -> None:
        if self._peek() != ch:
            raise MsrParseError(f"expected {ch!r} at {self.text[self.pos:][:20]!r}")
        self.pos += 1

    def parse(self) -> Term:
        t = self.term()
        self._skip_ws()
        if self.pos != len(self.text):
            raise MsrParseError(f"trailing input in term: {self.text[self.pos:]!r}")
        return t

    def term(self) -> Term:
        c = self._peek()
        if c == "<":
            self.pos += 1
            parts = [self.term()]
            while self._peek() == ",":
                self.pos += 1
                parts.append(self.term())
            self._expect(">")
            out = parts[-1]
            for p in reversed(parts[:-1]):
                out = App("pair", (p, out))
            return out
        if c == "'":
            self.pos += 1
            m = _IDENT_RE.match(self.text, self.pos)
            if not m:
                raise MsrParseError("empty quoted constant")
            self.pos = m.end()
            self._expect("'")
            if self.collect is not None:
                self.collect.add(m.group())
            return Pub(m.group())
        m = _IDENT_RE.match(self.text, self.pos if c else len(self.text))
        if c and m and m.start() == self.pos:
            self.pos = m.end()
            name = m.group()
            if self._peek() == "(":
                self.pos += 1
                args: list[Term] = []
                if self._peek() != ")":
                    args.append(self.term())
                    while self._peek() == ",":
                        self.pos += 1
                        args.append(self.term())
                self._expect(")")
                if name not in FUNCTIONS:
                    raise MsrParseError(f"unknown function symbol {name!r}")
                if len(args) != FUNCTIONS[name]:
                    raise MsrParseError(
                        f"{name} expects {FUNCTIONS[name]} arguments, got {len(args)}"
                    )
                return App(name, tuple(args))
            if name in self.pubs or name in BUILTIN_PUBS:
                if self.collect is not None:
                    self.collect.add(name)
                return Pub(name)
            return Var(name)
        raise MsrParseError(f"cannot parse term at {self.text[self.pos:][:20]!r}")


def parse_term(text: str, pubs: Iterable[str] = (), collect: set[str] | None = None) -> Term:
    return _TermParser(text, frozenset(pubs), collect).parse()


# --------------------------------------------------------------------------
# facts


_ALWAYS_PERSISTENT = frozenset({"K", "ind"})
_RESERVED_ARITIES = {"In": 1, "Out": 1, "Fr": 1, "K": 1, "ind": 2, "out_ind": 2, "in_ind": 2}
VIRTUAL_IN_PREFIX = "VIn"
VIRTUAL_OUT_PREFIX = "VOut"


def is_virtual_in(name: str) -> bool:
    return name.startswith(VIRTUAL_IN_PREFIX)


def is_virtual_out(name: str) -> bool:
    return name.startswith(VIRTUAL_OUT_PREFIX)


@dataclass(frozen=True)
class Fact:
    name: str
    args: tuple[Term, ...] = ()
    persistent: bool = False

    def __post_init__(self) -> None:
        if self.name in _ALWAYS_PERSISTENT and not self.persistent:
            object.__setattr__(self, "persistent", True)
        object.__setattr__(self, "_hash", hash((self.name, self.args, self.persistent)))

    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]


_FACT_KEY_MEMO: dict[Fact, tuple] = {}
_FACT_SHAPE_MEMO: dict[Fact, tuple] = {}


def fact_key(f: Fact) -> tuple:
    k = _FACT_KEY_MEMO.get(f)
    if k is None:
        k = (f.name, f.persistent, len(f.args), tuple(term_key(a) for a in f.args))
        _FACT_KEY_MEMO[f] = k
    return k


def fact_shape(f: Fact) -> tuple:
    k = _FACT_SHAPE_MEMO.get(f)
    if k is None:
        k = (f.name, f.persistent, len(f.args), tuple(term_shape(a) for a in f.args))
        _FACT_SHAPE_MEMO[f] = k
    return k


def fact_subst(f: Fact, binding: Mapping[str, Term]) -> Fact:
    return Fact(f.name, tuple(subst(a, binding) for a in f.args), f.persistent)


def normalize_fact(f: Fact) -> Fact:
    return Fact(f.name, tuple(normalize(a) for a in f.args), f.persistent)


def fact_vars(f: Fact) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for a in f.args:
        out |= term_vars(a)
    return out


def render_fact(f: Fact) -> str:
    bang = "!" if f.persistent else ""
    if not f.args:
        return f"{bang}{f.name}"
    return f"{bang}{f.name}(" + ", ".join(render_term(a) for a in f.args) + ")"


def kfact(t: Term) -> Fact:
    return Fact("K", (t,), persistent=True)


# --------------------------------------------------------------------------
# rules


@dataclass(frozen=True)
class Rule:
    name: str
    prems: tuple[Fact, ...]
    actions: tuple[Fact, ...]
    concs: tuple[Fact, ...]
    family: str = "role"


def rule_vars(r: Rule) -> frozenset[str]:
    out: frozenset[str] = frozenset()
    for f in r.prems + r.actions + r.concs:
        out |= fact_vars(f)
    return out


def instantiate(r: Rule, binding: Mapping[str, Term]) -> tuple[tuple[Fact, ...], tuple[Fact, ...], tuple[Fact, ...]]:
    """Ground premises, actions, and conclusions of a rule under a binding."""
    def inst(fs: tuple[Fact, ...]) -> tuple[Fact, ...]:
        return tuple(normalize_fact(fact_subst(f, binding)) for f in fs)

    return inst(r.prems), inst(r.actions), inst(r.concs)


def render_rule(r: Rule) -> str:
    prems = ", ".join(render_fact(f) for f in r.prems)
    concs = ", ".join(render_fact(f) for f in r.concs)
    if r.actions:
        acts = ", ".join(render_fact(f) for f in r.actions)
        return f"rule {r.name}: [ {prems} ] --[ {acts} ]-> [ {concs} ]"
    return f"rule {r.name}: [ {prems} ] ---> [ {concs} ]"


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class MsrState:
    """A multiset of ground facts: sorted (fact, count) pairs.

    Persistent facts are capped at one copy; the stored tuple is the
    canonical form, so equal states (as multisets modulo persistent
    deduplication) compare and hash equal.
    """

    facts: tuple[tuple[Fact, int], ...] = ()

    @classmethod
    def from_counter(cls, counts: Mapping[Fact, int]) -> "MsrState":
        acc: Counter[Fact] = Counter()
        for f, n in counts.items():
            if n < 0:
                raise MsrError(f"negative multiplicity for {render_fact(f)}")
            if n:
                acc[normalize_fact(f)] += n
        items = []
        for f in sorted(acc, key=fact_key):
            items.append((f, 1 if f.persistent else acc[f]))
        return cls(tuple(items))

    @classmethod
    def of(cls, *facts: Fact) -> "MsrState":
        return cls.from_counter(Counter(facts))

    def to_counter(self) -> Counter[Fact]:
        return Counter(dict(self.facts))

    def count(self, f: Fact) -> int:
        f = normalize_fact(f)
        for g, n in self.facts:
            if g == f:
                return n
        return 0

    def __contains__(self, f: Fact) -> bool:
        return self.count(f) > 0

    def names(self) -> frozenset[Name]:
        out: frozenset[Name] = frozenset()
        for f, _ in self.facts:
            for a in f.args:
                out |= names_of(a)
        return out

    def __str__(self) -> str:
        parts = []
        for f, n in self.facts:
            parts.append(render_fact(f) if n == 1 else f"{n}x {render_fact(f)}")
        return "{ " + ", ".join(parts) + " }"


def apply_rule(s: MsrState, r: Rule, binding: Mapping[str, Term]) -> MsrState:
    """Apply one rule instance: remove the instantiated linear premises, add
    the conclusions.  Persistent premises must be present but are not removed.

    The binding must cover every rule variable with a ground term; variables
    under a ``Fr`` premise must be bound to names that are globally fresh
    (occurring neither in the state nor elsewhere in the binding), which
    stands in for drawing from the fresh-name rule.
    """
    norm_binding = {v: normalize(t) for v, t in binding.items()}
    needed = rule_vars(r)
    missing = sorted(needed - norm_binding.keys())
    if missing:
        raise MsrError(f"binding for {r.name} missing variables: {', '.join(missing)}")
    for v in sorted(needed):
        if not is_ground(norm_binding[v]):
            raise MsrError(f"binding for {r.name}: {v} is not ground")

    fresh: dict[str, Name] = {}
    lin_prems: Counter[Fact] = Counter()
    per_prems: list[Fact] = []
    for p in r.prems:
        if p.name == "Fr":
            arg = p.args[0]
            if not isinstance(arg, Var):
                raise MsrError(f"rule {r.name}: Fr premise must bind a variable")
            val = norm_binding[arg.name]
            if not isinstance(val, Name):
                raise MsrError(f"rule {r.name}: {arg.name} must be bound to a fresh name")
            if val in fresh.values():
                raise MsrError(f"rule {r.name}: fresh name {render_term(val)} bound twice")
            fresh[arg.name] = val
            continue
        fp = normalize_fact(fact_subst(p, norm_binding))
        if fp.persistent:
            per_prems.append(fp)
        else:
            lin_prems[fp] += 1

    state_names = s.names()
    for v, n in fresh.items():
        if n in state_names:
            raise MsrError(f"rule {r.name}: name {render_term(n)} is not fresh in the state")
        for w in sorted(needed):
            if w != v and n in names_of(norm_binding[w]):
                raise MsrError(
                    f"rule {r.name}: fresh name {render_term(n)} leaks into binding of {w}"
                )

    counts = s.to_counter()
    for fp in per_prems:
        if counts.get(fp, 0) < 1:
            raise MsrError(f"rule {r.name}: premise not in state: {render_fact(fp)}")
    for fp, n in lin_prems.items():
        if counts.get(fp, 0) < n:
            raise MsrError(f"rule {r.name}: premise not in state: {render_fact(fp)}")
    for fp, n in lin_prems.items():
        counts[fp] -= n
    for c in r.concs:
        fc = normalize_fact(fact_subst(c, norm_binding))
        counts[fc] = 1 if fc.persistent else counts.get(fc, 0) + 1
    return MsrState.from_counter(counts)


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Model:
    pubs: frozenset[str]
    persistent: frozenset[str]
    rules: tuple[Rule, ...]

    @property
    def role_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.family == "role")

    @property
    def md_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.family == "md")

    @property
    def mdind_rules(self) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.family == "mdind")

    def rule_named(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise MsrError(f"no rule named {name!r}")


def _md_family(pubs: frozenset[str]) -> tuple[Rule, ...]:
    x = Var("x")
    rules = [
        Rule("md_out", (Fact("Out", (x,)),), (), (kfact(x),), family="md"),
        Rule("md_in", (kfact(x),), (kfact(x),), (Fact("In", (x,)),), family="md"),
        Rule("md_fresh", (Fact("Fr", (x,)),), (), (kfact(x),), family="md"),
    ]
    for c in sorted(pubs | BUILTIN_PUBS):
        rules.append(Rule(f"md_pub_{c}", (), (), (kfact(Pub(c)),), family="md"))
    for fn in sorted(FUNCTIONS):
        xs = tuple(Var(f"x{i}") for i in range(FUNCTIONS[fn]))
        rules.append(
            Rule(
                f"md_apply_{fn}",
                tuple(kfact(xi) for xi in xs),
                (),
                (kfact(App(fn, xs)),),
                family="md",
            )
        )
    return tuple(rules)


def _mdind_family(pubs: frozenset[str]) -> tuple[Rule, ...]:
    rid, x = Var("rid"), Var("x")

    def ind(t: Term) -> Fact:
        return Fact("ind", (rid, t), persistent=True)

    rules = [
        Rule("mdind_out", (ind(x),), (), (Fact("out_ind", (rid, x)),), family="mdind"),
        Rule("mdind_in", (Fact("in_ind", (rid, x)),), (), (ind(x),), family="mdind"),
        Rule("mdind_fresh", (Fact("Fr", (x,)),), (), (ind(x),), family="mdind"),
        Rule("sync_out", (Fact("out_ind", (rid, x)),), (), (kfact(x),), family="mdind"),
        Rule("sync_in", (kfact(x),), (), (Fact("in_ind", (rid, x)),), family="mdind"),
    ]
    for c in sorted(pubs | BUILTIN_PUBS):
        rules.append(Rule(f"mdind_pub_{c}", (), (), (ind(Pub(c)),), family="mdind"))
    for fn in sorted(FUNCTIONS):
        xs = tuple(Var(f"x{i}") for i in range(FUNCTIONS[fn]))
        rules.append(
            Rule(
                f"mdind_apply_{fn}",
                tuple(ind(xi) for xi in xs),
                (),
                (ind(App(fn, xs)),),
                family="mdind",
            )
        )
    return tuple(rules)


_PUB_LINE_RE = re.compile(r"^pub\s+(.*)$")
_RULE_HEAD_RE = re.compile(r"^rule\s+([A-Za-z_]\w*)\s*:\s*(.*)$", re.S)
_LET_RE = re.compile(r"^\s*let\s+([A-Za-z_]\w*)\s*=\s*(.*?)\s+in\b(.*)$", re.S)
_RULE_BODY_RE = re.compile(
    r"^\s*\[(?P<prems>[^\]]*)\]\s*-+(?:\[(?P<acts>[^\]]*)\])?-*>\s*\[(?P<concs>[^\]]*)\]\s*$",
    re.S,
)
_RESERVED_RULE_PREFIXES = ("md_", "mdind_", "sync_")


def _split_top(text: str) -> list[str]:
    """Split a fact or argument list on commas outside (), <>."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "(<":
            depth += 1
        elif ch in ")>":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur)
    if tail.strip() or parts:
        parts.append(tail)
    return [p.strip() for p in parts if p.strip()]


_FACT_RE = re.compile(r"^(!?)\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?$", re.S)


def parse_model(source: str) -> Model:
    """Parse a protocol model; the result includes the built-in deduction families.

    Syntax: ``//`` comments, ``pub a, b`` declarations, and rules of the form
    ``rule Name: [prems] --[actions]-> [concs]`` (``--->`` for an empty action
    list), optionally preceded by ``let v = term in`` bindings and spread over
    several lines.  ``!F(..)`` marks the fact symbol F persistent.
    """
    declared: set[str] = set()
    quoted: set[str] = set()
    lines = []
    for raw in source.splitlines():
        line = raw.split("//", 1)[0].rstrip()
        if line.strip():
            lines.append(line.strip())
    # public constants are document-wide, so collect them first
    for line in lines:
        m = _PUB_LINE_RE.match(line)
        if m:
            for name in m.group(1).split(","):
                name = name.strip()
                if not name or not _IDENT_RE.fullmatch(name):
                    raise MsrParseError(f"bad public constant name {name!r}")
                declared.add(name)
    declared_frozen = frozenset(declared)

    rule_texts: list[tuple[str, str]] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if _PUB_LINE_RE.match(line):
            continue
        m = _RULE_HEAD_RE.match(line)
        if not m:
            raise MsrParseError(f"cannot parse line: {line!r}")
        name, body = m.group(1), m.group(2)
        while not (body.rstrip().endswith("]") and "->" in body):
            if i >= len(lines):
                raise MsrParseError(f"unterminated rule {name}")
            body = body + "\n" + lines[i]
            i += 1
        rule_texts.append((name, body))

    persistent: dict[str, bool] = {}
    arities: dict[str, int] = dict(_RESERVED_ARITIES)

    def parse_fact(text: str, lets: Mapping[str, Term], rule: str) -> Fact:
        m = _FACT_RE.match(text.strip())
        if not m:
            raise MsrParseError(f"rule {rule}: cannot parse fact {text!r}")
        bang, name, argtext = m.group(1) == "!", m.group(2), m.group(3)
        args = tuple(
            subst(parse_term(a, declared_frozen, quoted), lets)
            for a in _split_top(argtext or "")
        )
        if name in ("K", "ind", "out_ind", "in_ind"):
            raise MsrParseError(f"rule {rule}: fact symbol {name} is reserved")
        if name in ("In", "Out", "Fr") and bang:
            raise MsrParseError(f"rule {rule}: {name} facts are linear")
        if name in arities and arities[name] != len(args):
            raise MsrParseError(
                f"rule {rule}: {name} used with {len(args)} arguments, "
                f"elsewhere with {arities[name]}"
            )
        arities.setdefault(name, len(args))
        if name in persistent and persistent[name] != bang:
            raise MsrParseError(f"rule {rule}: inconsistent persistence marking for {name}")
        persistent.setdefault(name, bang)
        return Fact(name, args, persistent=bang)

    rules: list[Rule] = []
    seen_names: set[str] = set()
    for name, body in rule_texts:
        if name in seen_names:
            raise MsrParseError(f"duplicate rule name {name}")
        if name.startswith(_RESERVED_RULE_PREFIXES):
            raise MsrParseError(f"rule name {name} uses a reserved prefix")
        seen_names.add(name)
        lets: dict[str, Term] = {}
        while True:
            m = _LET_RE.match(body)
            if not m:
                break
            v, rhs, body = m.group(1), m.group(2), m.group(3)
            lets[v] = subst(parse_term(rhs, declared_frozen, quoted), lets)
        m = _RULE_BODY_RE.match(body)
        if not m:
            raise MsrParseError(f"rule {name}: cannot parse body {body!r}")
        prems = tuple(parse_fact(t, lets, name) for t in _split_top(m.group("prems")))
        acts = tuple(parse_fact(t, lets, name) for t in _split_top(m.group("acts") or ""))
        concs = tuple(parse_fact(t, lets, name) for t in _split_top(m.group("concs")))

        prem_vars: frozenset[str] = frozenset()
        for p in prems:
            prem_vars |= fact_vars(p)
            if p.name == "Out":
                raise MsrParseError(f"rule {name}: Out cannot appear in premises")
            if p.name == "Fr" and (len(p.args) != 1 or not isinstance(p.args[0], Var)):
                raise MsrParseError(f"rule {name}: Fr takes a single variable")
        for c in concs:
            if c.name in ("In", "Fr"):
                raise MsrParseError(f"rule {name}: {c.name} cannot appear in conclusions")
        conc_vars: frozenset[str] = frozenset()
        for c in concs + acts:
            conc_vars |= fact_vars(c)
        free = conc_vars - prem_vars
        if free:
            raise MsrParseError(
                f"rule {name}: variables not bound by premises: {', '.join(sorted(free))}"
            )
        rules.append(Rule(name, prems, acts, concs))

    pubset = frozenset(declared | quoted)
    all_rules = tuple(rules) + _md_family(pubset) + _mdind_family(pubset)
    persistent_names = frozenset(n for n, p in persistent.items() if p) | _ALWAYS_PERSISTENT
    return Model(pubs=pubset, persistent=persistent_names, rules=all_rules)


# --------------------------------------------------------------------------
# attacker knowledge

_Deriv = tuple  # ("init",) | ("fst"|"snd", parent) | ("sdec", parent, key) | ("adec", parent, sk)


def _derivable(t: Term, deriv: Mapping[Term, _Deriv], pubs: frozenset[str]) -> bool:
    if t in deriv:
        return True
    if isinstance(t, Pub):
        return True
    if isinstance(t, App):
        return all(_derivable(a, deriv, pubs) for a in t.args)
    return False


def _saturate(base: Sequence[Term], pubs: frozenset[str]) -> dict[Term, _Deriv]:
    deriv: dict[Term, _Deriv] = {}
    for t in base:
        deriv.setdefault(t, ("init",))
    changed = True
    while changed:
        changed = False
        for t in list(deriv):
            if not isinstance(t, App):
                continue
            if t.fn == "pair":
                for i, proj in ((0, "fst"), (1, "snd")):
                    c = t.args[i]
                    if c not in deriv:
                        deriv[c] = (proj, t)
                        changed = True
            elif t.fn == "senc":
                p, k = t.args
                if p not in deriv and _derivable(k, deriv, pubs):
                    deriv[p] = ("sdec", t, k)
                    changed = True
            elif t.fn == "aenc":
                p, ek = t.args
                if isinstance(ek, App) and ek.fn == "pk":
                    sk = ek.args[0]
                    if p not in deriv and _derivable(sk, deriv, pubs):
                        deriv[p] = ("adec", t, sk)
                        changed = True
    return deriv


class Knowledge:
    """Analyzed attacker knowledge: the base terms it has absorbed plus the
    closure under decomposition; composition is checked on demand."""

    __slots__ = ("pubs", "base", "_deriv", "_analyzed", "_candidates", "_known", "_exts")

    def __init__(self, pubs: Iterable[str], base: Iterable[Term] = ()):
        self.pubs = frozenset(pubs) | BUILTIN_PUBS
        self.base = tuple(sorted({normalize(t) for t in base}, key=term_key))
        self._deriv = _saturate(self.base, self.pubs)
        self._analyzed = tuple(sorted(self._deriv, key=term_key))
        cands = dict.fromkeys(self._analyzed)
        for c in sorted(self.pubs):
            cands.setdefault(Pub(c))
        self._candidates = tuple(sorted(cands, key=term_key))
        self._known: dict[Term, bool] = {}
        self._exts: dict[Term, tuple[dict[str, Term], ...]] = {}

    def with_terms(self, terms: Iterable[Term]) -> "Knowledge":
        return Knowledge(self.pubs, self.base + tuple(terms))

    def analyzed(self) -> tuple[Term, ...]:
        return self._analyzed

    def synth_candidates(self) -> tuple[Term, ...]:
        return self._candidates

    def derivable(self, t: Term) -> bool:
        n = normalize(t)
        r = self._known.get(n)
        if r is None:
            r = _derivable(n, self._deriv, self.pubs)
            self._known[n] = r
        return r

    def deduction_plan(self, t: Term, established: set[Term]) -> list[tuple[str, dict[str, Term]]]:
        """Deduction-rule applications establishing K(t), assuming K facts for
        ``established`` are already in the state.  Extends ``established``."""
        steps: list[tuple[str, dict[str, Term]]] = []
        self._plan(normalize(t), established, steps)
        return steps

    def _plan(self, t: Term, have: set[Term], steps: list[tuple[str, dict[str, Term]]]) -> None:
        if t in have:
            return
        rec = self._deriv.get(t)
        if rec is not None and rec[0] != "init":
            kind = rec[0]
            if kind in ("fst", "snd"):
                self._plan(rec[1], have, steps)
                steps.append((f"md_apply_{kind}", {"x0": rec[1]}))
            elif kind == "sdec":
                self._plan(rec[1], have, steps)
                self._plan(rec[2], have, steps)
                steps.append(("md_apply_sdec", {"x0": rec[1], "x1": rec[2]}))
            else:  # adec
                self._plan(rec[1], have, steps)
                self._plan(rec[2], have, steps)
                steps.append(("md_apply_adec", {"x0": rec[1], "x1": rec[2]}))
            have.add(t)
            return
        if rec is not None:
            raise MsrError(f"base term {render_term(t)} not marked as absorbed")
        if isinstance(t, Pub):
            if t.name not in self.pubs:
                raise MsrError(f"undeclared public constant {render_term(t)}")
            steps.append((f"md_pub_{t.name}", {}))
            have.add(t)
            return
        if isinstance(t, App):
            for a in t.args:
                self._plan(a, have, steps)
            steps.append((f"md_apply_{t.fn}", {f"x{i}": a for i, a in enumerate(t.args)}))
            have.add(t)
            return
        raise MsrError(f"term not derivable: {render_term(t)}")


def _binding_key(b: Mapping[str, Term]) -> tuple:
    return tuple(sorted((v, term_key(t)) for v, t in b.items()))


def _derive_exts(p: Term, know: Knowledge) -> tuple[dict[str, Term], ...]:
    """Extensions over the free variables of ``p`` (a residual pattern with
    already-bound variables substituted away) making it derivable.  Memoized
    per knowledge set, which is shared across exploration states."""
    memo = know._exts
    cached = memo.get(p)
    if cached is not None:
        return cached
    exts: tuple[dict[str, Term], ...]
    if is_ground(p):
        exts = ({},) if know.derivable(normalize(p)) else ()
    elif isinstance(p, Var):
        exts = tuple({p.name: t} for t in know.synth_candidates())
    else:
        assert isinstance(p, App)
        found: dict[tuple, dict[str, Term]] = {}
        for t in know.analyzed():
            m = match_term(p, t)
            if m is not None:
                found.setdefault(_binding_key(m), m)
        # fold variable-free arguments first: a ground underivable argument
        # kills the whole product at the cost of one derivability check
        order = sorted(range(len(p.args)), key=lambda i: (bool(term_vars(p.args[i])), i))
        partial: list[dict[str, Term]] = [{}]
        for i in order:
            a = p.args[i]
            nxt: list[dict[str, Term]] = []
            for b in partial:
                for e in _derive_exts(subst(a, b), know):
                    nxt.append(b | e)
            partial = nxt
            if not partial:
                break
        for b in partial:
            found.setdefault(_binding_key(b), b)
        exts = tuple(found[k] for k in sorted(found))
    memo[p] = exts
    return exts


def derive_match(pattern: Term, binding: Mapping[str, Term], know: Knowledge) -> list[dict[str, Term]]:
    """Bindings extending ``binding`` under which the pattern is derivable.

    Bare variables range over the analyzed terms and public constants (the
    finite synthesis basis); structured patterns are matched against analyzed
    terms and, independently, built constructor-wise.  The list is
    deduplicated and ordered deterministically.
    """
    return [dict(binding) | e for e in _derive_exts(subst(pattern, binding), know)]


# --------------------------------------------------------------------------
# bounded exploration


@dataclass(frozen=True)
class AttackWitness:
    query: str
    description: str
    depth: int
    steps: tuple[tuple[str, tuple[tuple[str, Term], ...]], ...]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "description": self.description,
            "depth": self.depth,
            "length": len(self.steps),
            "steps": [
                {"rule": name, "binding": {v: render_term(t) for v, t in b}}
                for name, b in self.steps
            ],
        }


@dataclass(frozen=True)
class ExploreReport:
    verdict: str
    attack: AttackWitness | None
    states: int
    transitions: int
    depth_bound: int
    bound_hit: bool
    exhausted: bool
    queries: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "attack": self.attack.to_dict() if self.attack else None,
            "states": self.states,
            "transitions": self.transitions,
            "depth_bound": self.depth_bound,
            "bound_hit": self.bound_hit,
            "exhausted": self.exhausted,
            "queries": list(self.queries),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class _Edge:
    rule: Rule
    binding: tuple[tuple[str, Term], ...]
    injected: tuple[Term, ...]


def _name_occurrences(t: Term, path: tuple[int, ...] = ()) -> Iterable[tuple[Name, tuple[int, ...]]]:
    if isinstance(t, Name):
        yield t, path
    elif isinstance(t, App):
        for i, a in enumerate(t.args):
            yield from _name_occurrences(a, path + (i,))


def _rename_term(t: Term, ren: Mapping[Name, Name]) -> Term:
    if isinstance(t, Name):
        return ren[t]
    if isinstance(t, App):
        return App(t.fn, tuple(_rename_term(a, ren) for a in t.args))
    return t


def _canon_key(
    state: MsrState,
    know: Knowledge,
    secrets: frozenset[Term],
    corrupted: frozenset[Term],
    running: tuple[tuple[tuple[str, tuple[Term, ...]], int], ...],
) -> tuple:
    """Canonical node key: fresh names are renumbered by occurrence structure.

    Equal keys imply the nodes are identical up to a fresh-name bijection
    (the renaming itself is the witness), so merging is always sound; nearly
    symmetric states may occasionally canonicalize apart, which only costs
    a re-visit.
    """
    units: list[tuple[str, tuple, int, tuple[Term, ...]]] = []
    for f, n in state.facts:
        units.append(("f:" + f.name + ("!" if f.persistent else ""), fact_shape(f), n, f.args))
    for t in know.analyzed():
        units.append(("k", term_shape(t), 1, (t,)))
    for t in sorted(secrets, key=term_key):
        units.append(("s", term_shape(t), 1, (t,)))
    for t in sorted(corrupted, key=term_key):
        units.append(("c", term_shape(t), 1, (t,)))
    for (nm, args), n in running:
        units.append(("r:" + nm, tuple(term_shape(a) for a in args), n, args))

    occ: dict[Name, list[tuple]] = {}
    for tag, shape, n, terms in units:
        for i, t in enumerate(terms):
            for name, path in _name_occurrences(t):
                occ.setdefault(name, []).append((tag, shape, i, path))
    ranked = sorted(occ, key=lambda nm: (nm.label, tuple(sorted(occ[nm])), nm.idx))
    ren = {nm: Name(nm.label, i) for i, nm in enumerate(ranked)}

    out = []
    for tag, shape, n, terms in units:
        out.append((tag, n, tuple(term_key(_rename_term(t, ren)) for t in terms)))
    return tuple(sorted(out))


def _match_state_prems(
    prems: Sequence[Fact], state: MsrState
) -> list[dict[str, Term]]:
    partial: list[tuple[dict[str, Term], Counter[Fact]]] = [({}, Counter())]
    for p in prems:
        nxt: list[tuple[dict[str, Term], Counter[Fact]]] = []
        for b, used in partial:
            for f, cnt in state.facts:
                if f.name != p.name or len(f.args) != len(p.args):
                    continue
                if not f.persistent and cnt - used[f] < 1:
                    continue
                m: Mapping[str, Term] | None = b
                for pa, fa in zip(p.args, f.args):
                    m = match_term(pa, fa, m)
                    if m is None:
                        break
                if m is None:
                    continue
                used2 = used.copy()
                if not f.persistent:
                    used2[f] += 1
                nxt.append((dict(m), used2))
        partial = nxt
        if not partial:
            return []
    dedup: dict[tuple, dict[str, Term]] = {}
    for b, _ in partial:
        dedup.setdefault(_binding_key(b), b)
    return [dedup[k] for k in sorted(dedup)]


def _rule_instances(
    rule: Rule,
    state: MsrState,
    know: Knowledge,
    freshctr: "itertools.count[int]",
    max_inj: int | None = None,
) -> tuple[list[tuple[dict[str, Term], tuple[Term, ...]]], bool]:
    """Ground instances of ``rule`` at ``state``: (binding, injected-terms).

    ``max_inj`` caps the number of attacker injections per instance; branches
    beyond the cap are dropped and reported through the second component.
    (The flag can over-report when a capped rule's later In premise would
    have been unsatisfiable, which errs toward the weaker verdict.)
    """
    state_prems = [p for p in rule.prems if p.name not in ("Fr", "In")]
    in_prems = [p for p in rule.prems if p.name == "In"]
    fr_vars = [p.args[0].name for p in rule.prems if p.name == "Fr"]
    pruned = False

    partial: list[tuple[dict[str, Term], tuple[Term, ...]]] = [
        (b, ()) for b in _match_state_prems(state_prems, state)
    ]
    for p in in_prems:
        nxt: list[tuple[dict[str, Term], tuple[Term, ...]]] = []
        for b, inj in partial:
            residual = subst(p.args[0], b)
            exts = _derive_exts(residual, know)
            if exts and max_inj is not None and len(inj) >= max_inj:
                pruned = True
                continue
            for e in exts:
                nxt.append((dict(b) | e, inj + (normalize(subst(residual, e)),)))
        partial = nxt
        if not partial:
            return [], pruned
    out = []
    for b, inj in partial:
        b2 = dict(b)
        for v in fr_vars:
            b2[v] = Name(v, next(freshctr))
        out.append((b2, inj))
    return out, pruned


_KNOWN_QUERIES = ("secrecy", "agreement")


def explore_traces(
    model: Model,
    max_depth: int,
    queries: Sequence[str] = _KNOWN_QUERIES,
    max_states: int = 150_000,
) -> ExploreReport:
    """Breadth-first bounded exploration of a model under the network attacker.

    A step applies one non-deduction rule; its cost is 1 plus the number of
    ``In`` premises satisfied by attacker injection.  Outputs are absorbed
    into the attacker's analyzed knowledge as they appear.  Secrecy is
    violated when a term recorded by a ``Secret`` action becomes derivable
    without a ``Corrupt``/``Reveal`` action covering it; injective agreement
    is violated when a ``Commit`` action has no unmatched earlier ``Running``
    action with equal arguments.  Every attack is expanded into an explicit
    rule sequence (deduction steps included) and replayed through
    ``apply_rule`` before it is reported.
    """
    if max_depth < 1:
        raise MsrError("depth bound must be positive")
    for q in queries:
        if q not in _KNOWN_QUERIES:
            raise MsrError(f"unknown query {q!r}")

    freshctr = itertools.count()
    know0 = Knowledge(model.pubs)
    know_cache: dict[tuple[Term, ...], Knowledge] = {know0.base: know0}
    node0 = (MsrState.of(), know0, frozenset(), frozenset(), ())
    key0 = _canon_key(*node0)
    nodes: dict[tuple, tuple] = {key0: node0}
    depth: dict[tuple, int] = {key0: 0}
    came: dict[tuple, tuple[tuple, _Edge]] = {}
    heap: list[tuple[int, int, tuple]] = [(0, 0, key0)]
    seq = itertools.count(1)
    bound_hit = False
    truncated = False
    transitions = 0

    def build_attack(parent_key: tuple, edge: _Edge, query: str, desc: str, d: int) -> AttackWitness:
        chain: list[_Edge] = [edge]
        k = parent_key
        while k in came:
            k, e = came[k]
            chain.append(e)
        chain.reverse()
        steps = _expand_edges(model, chain)
        return AttackWitness(query=query, description=desc, depth=d, steps=tuple(steps))

    attack: AttackWitness | None = None
    while heap and attack is None:
        d, _, key = heapq.heappop(heap)
        if d != depth.get(key):
            continue
        state, know, secrets, corrupted, running = nodes[key]
        for rule in model.role_rules:
            if attack is not None:
                break
            instances, pruned = _rule_instances(
                rule, state, know, freshctr, max_inj=max_depth - d - 1
            )
            if pruned:
                bound_hit = True
            for binding, injected in instances:
                cost = 1 + len(injected)
                nd = d + cost
                if nd > max_depth:
                    bound_hit = True
                    continue
                transitions += 1
                # Successor computed directly: the matcher already guarantees
                # premise availability and fresh-name validity, and every
                # reported witness step is replayed through apply_rule.
                counts = state.to_counter()
                for p in rule.prems:
                    if p.persistent or p.name in ("Fr", "In"):
                        continue
                    f = normalize_fact(fact_subst(p, binding))
                    counts[f] -= 1
                    if not counts[f]:
                        del counts[f]
                outs: list[Term] = []
                for c in rule.concs:
                    f = normalize_fact(fact_subst(c, binding))
                    if f.name == "Out":
                        outs.append(f.args[0])
                    else:
                        counts[f] += 1
                succ = MsrState.from_counter(counts)

                if outs:
                    base2 = tuple(sorted(set(know.base) | set(outs), key=term_key))
                    know2 = know_cache.get(base2)
                    if know2 is None:
                        know2 = Knowledge(know.pubs, base2)
                        know_cache[base2] = know2
                else:
                    know2 = know

                actions = tuple(normalize_fact(fact_subst(a, binding)) for a in rule.actions)
                secrets2, corrupted2 = secrets, corrupted
                run_counts = Counter(dict(running))
                edge = _Edge(rule, tuple(sorted(binding.items())), injected)
                for a in actions:
                    if a.name == "Secret":
                        secrets2 = secrets2 | {a.args[0]}
                    elif a.name in ("Corrupt", "Reveal"):
                        corrupted2 = corrupted2 | set(a.args)
                    elif a.name == "Running":
                        run_counts[(a.name, a.args)] += 1
                    elif a.name == "Commit":
                        k_run = ("Running", a.args)
                        if run_counts[k_run] > 0:
                            run_counts[k_run] -= 1
                        elif "agreement" in queries:
                            attack = build_attack(
                                key,
                                edge,
                                "agreement",
                                f"{render_fact(a)} without a matching Running action",
                                nd,
                            )
                            break
                if attack is not None:
                    break
                if "secrecy" in queries:
                    for s in sorted(secrets2 - corrupted2, key=term_key):
                        if know2.derivable(s):
                            attack = build_attack(
                                key,
                                edge,
                                "secrecy",
                                f"attacker derives {render_term(s)} marked Secret",
                                nd,
                            )
                            break
                if attack is not None:
                    break

                running2 = tuple(
                    sorted(
                        ((k2, n) for k2, n in run_counts.items() if n > 0),
                        key=lambda it: (it[0][0], tuple(term_key(a) for a in it[0][1])),
                    )
                )
                succ_node = (succ, know2, secrets2, corrupted2, running2)
                succ_key = _canon_key(*succ_node)
                if succ_key in depth and depth[succ_key] <= nd:
                    continue
                if succ_key not in depth and len(nodes) >= max_states:
                    truncated = True
                    continue
                nodes[succ_key] = succ_node
                depth[succ_key] = nd
                came[succ_key] = (key, edge)
                heapq.heappush(heap, (nd, next(seq), succ_key))

    if attack is not None:
        verdict = f"attack found: {attack.query}"
    elif truncated:
        verdict = "search truncated: state cap reached"
    elif bound_hit:
        verdict = "no attack within bound"
    else:
        verdict = "no attack: state space exhausted"
    return ExploreReport(
        verdict=verdict,
        attack=attack,
        states=len(nodes),
        transitions=transitions,
        depth_bound=max_depth,
        bound_hit=bound_hit,
        exhausted=not truncated,
        queries=tuple(queries),
    )


def _expand_edges(model: Model, edges: Sequence[_Edge]) -> list[tuple[str, tuple[tuple[str, Term], ...]]]:
    """Expand exploration edges into an explicit validated rule sequence.

    Attacker work (absorbing outputs, deduction, injecting inputs) becomes
    md_* rule applications; apply_rule re-checks every step from the empty
    state, so a reported witness is a genuine concrete trace.
    """
    state = MsrState.of()
    know = Knowledge(model.pubs)
    established: set[Term] = set()
    absorbed: list[Term] = []
    steps: list[tuple[str, tuple[tuple[str, Term], ...]]] = []

    def run(rule_name: str, binding: Mapping[str, Term]) -> None:
        nonlocal state
        state = apply_rule(state, model.rule_named(rule_name), binding)
        steps.append((rule_name, tuple(sorted(binding.items()))))

    for edge in edges:
        for t in edge.injected:
            for rname, b in know.deduction_plan(t, established):
                run(rname, b)
            run("md_in", {"x": t})
        run(edge.rule.name, dict(edge.binding))
        outs = [(f.args[0], n) for f, n in state.facts if f.name == "Out"]
        for t, n in outs:
            for _ in range(n):
                run("md_out", {"x": t})
            established.add(t)
            absorbed.append(t)
        if outs:
            know = know.with_terms([t for t, _ in outs])
    return steps


# --------------------------------------------------------------------------
# independent-deduction replay


@dataclass(frozen=True)
class ReplayStep:
    index: int
    concrete_rule: str
    abstract_action: str


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    steps: tuple[ReplayStep, ...]
    failed_at: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "failed_at": self.failed_at,
            "reason": self.reason,
            "steps": [
                {"index": s.index, "rule": s.concrete_rule, "abstract": s.abstract_action}
                for s in self.steps
            ],
        }


def rename_r(state: MsrState) -> MsrState:
    """The abstraction renaming: component knowledge and its boundary buffers
    all become attacker knowledge; everything else maps to itself.  Persistent
    K facts deduplicate in the image."""
    counts: Counter[Fact] = Counter()
    for f, n in state.facts:
        if f.name in ("ind", "out_ind", "in_ind"):
            counts[kfact(f.args[1])] += n
        else:
            counts[f] += n
    return MsrState.from_counter(counts)


def _abstract_step(model: Model, rule: Rule, binding: Mapping[str, Term]) -> tuple[Rule, dict[str, Term]] | None:
    if rule.family in ("role", "md"):
        return rule, dict(binding)
    name = rule.name
    if name in ("mdind_out", "mdind_in", "sync_out", "sync_in"):
        return None
    if name == "mdind_fresh":
        return model.rule_named("md_fresh"), {"x": binding["x"]}
    if name.startswith("mdind_pub_"):
        return model.rule_named("md_pub_" + name[len("mdind_pub_"):]), {}
    if name.startswith("mdind_apply_"):
        fn = name[len("mdind_apply_"):]
        return model.rule_named("md_apply_" + fn), {
            f"x{i}": binding[f"x{i}"] for i in range(FUNCTIONS[fn])
        }
    raise MsrError(f"no abstract counterpart for rule {name}")


def simulate_independent(
    model: Model, trace: Sequence[tuple[str, Mapping[str, Term]]]
) -> ReplayReport:
    """Replay a composed concrete trace (role + md + mdind steps) abstractly.

    Each concrete step is validated with apply_rule, then replayed as the
    step its family prescribes: role and md rules replay as themselves,
    component deduction replays as the matching attacker deduction, and the
    boundary moves (out_ind/in_ind production and consumption) replay as
    nothing at all.  After every step the renamed concrete state must equal
    the abstract state.
    """
    concrete = MsrState.of()
    abstract = MsrState.of()
    steps: list[ReplayStep] = []
    for i, (rule_name, binding) in enumerate(trace):
        rule = model.rule_named(rule_name)
        try:
            concrete2 = apply_rule(concrete, rule, binding)
        except MsrError as e:
            return ReplayReport(
                ok=False, steps=tuple(steps), failed_at=i, reason=f"concrete step invalid: {e}"
            )
        ab = _abstract_step(model, rule, binding)
        if ab is None:
            abstract2 = abstract
            action = "epsilon"
        else:
            arule, abinding = ab
            try:
                abstract2 = apply_rule(abstract, arule, abinding)
            except MsrError as e:
                return ReplayReport(
                    ok=False,
                    steps=tuple(steps),
                    failed_at=i,
                    reason=f"abstract step {arule.name} failed: {e}",
                )
            action = arule.name if arule is not rule else "same-rule"
        if rename_r(concrete2) != abstract2:
            return ReplayReport(
                ok=False,
                steps=tuple(steps),
                failed_at=i,
                reason="states unrelated after step: "
                f"{rename_r(concrete2)} vs {abstract2}",
            )
        steps.append(ReplayStep(index=i, concrete_rule=rule_name, abstract_action=action))
        concrete, abstract = concrete2, abstract2
    return ReplayReport(ok=True, steps=tuple(steps))


# --------------------------------------------------------------------------
# role I/O automata


@dataclass(frozen=True)
class IOEvent:
    direction: str  # "in" | "out" | "vin" | "vout"
    slot: str  # fact symbol for virtual events, "net" for In/Out
    patterns: tuple[Term, ...]

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "slot": self.slot,
            "patterns": [render_term(p) for p in self.patterns],
        }


@dataclass(frozen=True)
class IOTransition:
    src: str
    dst: str
    event: IOEvent
    rule: str
    # canonical variables this rule instantiates afresh at each firing (as
    # opposed to values carried through the role's state fact); attached to
    # the first transition of the rule's chain so a simulator knows where a
    # firing begins and which bindings it may rebind
    fresh: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "rule": self.rule,
            "fresh": list(self.fresh),
            **self.event.to_dict(),
        }


@dataclass(frozen=True)
class IOAutomaton:
    role: str
    states: tuple[str, ...]
    initial: str
    transitions: tuple[IOTransition, ...]
    warnings: tuple[str, ...] = ()

    def transitions_from(self, state: str) -> tuple[IOTransition, ...]:
        return tuple(t for t in self.transitions if t.src == state)

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "states": list(self.states),
            "initial": self.initial,
            "transitions": [t.to_dict() for t in self.transitions],
            "warnings": list(self.warnings),
        }


def role_iospec(model: Model, role: str) -> IOAutomaton:
    """Extract a role's I/O automaton from its state-fact chain.

    Role rules are those mentioning a fact named ``<role>`` or ``<role>_*``;
    each must consume at most one and produce at most one such fact, forming
    a chain from the synthetic ``start`` state.  A rule's network and virtual
    I/O events become a transition chain through per-rule micro-states;
    variables are renamed into a single run-scoped namespace by propagating
    state-fact arguments, so patterns in later transitions share bindings
    with earlier ones.  Variables a rule instantiates itself (rather than
    reading from its state fact) are listed as ``fresh`` on the chain's first
    transition: each firing of the rule picks them anew.
    """

    def is_role_fact(name: str) -> bool:
        return name == role or name.startswith(role + "_")

    role_rules = [
        r
        for r in model.role_rules
        if any(is_role_fact(f.name) for f in r.prems + r.concs)
    ]
    if not role_rules:
        return IOAutomaton(role=role, states=("start",), initial="start", transitions=())

    canon: dict[str, tuple[Term, ...]] = {}
    used_names: set[str] = set()
    states: list[str] = ["start"]
    transitions: list[IOTransition] = []

    def fresh_canon(v: str) -> str:
        cv, k = v, 1
        while cv in used_names:
            cv = f"{v}_{k}"
            k += 1
        used_names.add(cv)
        return cv

    pending = list(role_rules)
    while pending:
        progressed = False
        for r in list(pending):
            prem_facts = [f for f in r.prems if is_role_fact(f.name)]
            conc_facts = [f for f in r.concs if is_role_fact(f.name)]
            if len(prem_facts) > 1 or len(conc_facts) > 1:
                raise MsrError(f"role rules not chain-structured: {r.name}")
            src_fact = prem_facts[0] if prem_facts else None
            if src_fact is not None and src_fact.name not in canon:
                continue
            pending.remove(r)
            progressed = True

            ren: dict[str, Term] = {}
            if src_fact is not None:
                if len(src_fact.args) != len(canon[src_fact.name]):
                    raise MsrError(
                        f"role rules not chain-structured: {src_fact.name} arity varies"
                    )
                for v, ct in zip(src_fact.args, canon[src_fact.name]):
                    if not isinstance(v, Var):
                        raise MsrError(
                            f"role rules not chain-structured: {r.name} must bind "
                            f"{src_fact.name} arguments to variables"
                        )
                    ren[v.name] = ct
            fresh_here: list[str] = []
            for v in sorted(rule_vars(r)):
                if v not in ren:
                    cv = fresh_canon(v)
                    ren[v] = Var(cv)
                    fresh_here.append(cv)

            events: list[IOEvent] = []
            for f in r.prems:
                if f.name == "In":
                    events.append(IOEvent("in", "net", (subst(f.args[0], ren),)))
                elif is_virtual_in(f.name):
                    events.append(
                        IOEvent("vin", f.name, tuple(subst(a, ren) for a in f.args))
                    )
            for f in r.concs:
                if f.name == "Out":
                    events.append(IOEvent("out", "net", (subst(f.args[0], ren),)))
                elif is_virtual_out(f.name):
                    events.append(
                        IOEvent("vout", f.name, tuple(subst(a, ren) for a in f.args))
                    )
            if not events:
                raise MsrError(
                    f"role rules not chain-structured: {r.name} has no I/O events"
                )

            src_name = src_fact.name if src_fact is not None else "start"
            if conc_facts:
                dst_fact = conc_facts[0]
                new_canon = tuple(normalize(subst(a, ren)) for a in dst_fact.args)
                if dst_fact.name in canon:
                    if canon[dst_fact.name] != new_canon:
                        raise MsrError(
                            "role rules not chain-structured: conflicting state "
                            f"arguments for {dst_fact.name}"
                        )
                else:
                    canon[dst_fact.name] = new_canon
                    for t in new_canon:
                        used_names.update(term_vars(t))
                dst_name = dst_fact.name
            else:
                dst_name = "end"
            for nm in (src_name, dst_name):
                if nm not in states:
                    states.append(nm)

            cur = src_name
            for j, ev in enumerate(events):
                last = j == len(events) - 1
                nxt = dst_name if last else f"{r.name}:{j + 1}"
                if not last and nxt not in states:
                    states.append(nxt)
                transitions.append(
                    IOTransition(
                        src=cur,
                        dst=nxt,
                        event=ev,
                        rule=r.name,
                        fresh=tuple(fresh_here) if j == 0 else (),
                    )
                )
                cur = nxt
        if not progressed:
            stuck = ", ".join(sorted(r.name for r in pending))
            raise MsrError(f"role rules not chain-structured: no entry point for {stuck}")

    warnings: list[str] = []
    for a, b in itertools.combinations(transitions, 2):
        if a.src != b.src or a.rule == b.rule:
            continue
        ea, eb = a.event, b.event
        if ea.direction != eb.direction or ea.slot != eb.slot:
            continue
        if len(ea.patterns) != len(eb.patterns):
            continue
        # run the unifier over freshened copies so shared run variables overlap
        env: dict[str, Term] | None = {}
        renb = {v: Var(v + "'") for p in eb.patterns for v in term_vars(p)}
        for pa, pb in zip(ea.patterns, eb.patterns):
            env = unify(pa, subst(pb, renb), env)
            if env is None:
                break
        if env is not None:
            warnings.append(
                f"overlapping {ea.direction} transitions from {a.src}: "
                f"rules {a.rule} and {b.rule}"
            )

    return IOAutomaton(
        role=role,
        states=tuple(states),
        initial="start",
        transitions=tuple(transitions),
        warnings=tuple(warnings),
    )
