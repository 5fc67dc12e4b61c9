"""Hand-worked rule-application cases shared by test modules.

Each row fixes a start state, a rule instance (rule name in CASES_MODEL plus
a ground binding), and either the exact multiset expected afterwards or a
fragment of the error message.  Expected multisets were computed by hand as
"state minus instantiated linear premises plus instantiated conclusions",
with persistent facts checked-but-kept and capped at one copy.
"""

from __future__ import annotations

from collections import Counter

from corefence.msr import (
    App,
    Fact,
    MsrState,
    Name,
    Pub,
    Term,
    Var,
    parse_model,
)

CASES_MODEL = """
pub a, b, c

rule Move:  [ A(x) ] ---> [ B(x) ]
rule Dup2:  [ A(x), A(y) ] ---> [ Pair2(x, y) ]
rule Keep:  [ !Ltk(k) ] ---> [ S1(k) ]
rule ReLtk: [ !Ltk(k) ] ---> [ !Ltk(k), S1(k) ]
rule MkLtk: [ Fr(k) ] ---> [ !Ltk(k) ]
rule Gen:   [ Fr(x), Fr(y) ] ---> [ N(x), N(y) ]
rule Note:  [ A(x) ] --[ Secret(x) ]-> [ A(x) ]
rule Fst:   [ A(x) ] ---> [ B(fst(x)) ]
rule Recv:  [ In(x) ] ---> [ Got(x) ]
rule Send:  [ A(x) ] ---> [ Out(x) ]
rule Wrap:
  let p = <m, sign(m, k)> in
  [ St(r, k), VIn_m(m) ] ---> [ St(r, k), Out(p) ]
"""


def cases_model():
    return parse_model(CASES_MODEL)


_pa, _pb, _pc = Pub("a"), Pub("b"), Pub("c")
_n0, _n1 = Name("n", 0), Name("n", 1)
_k0 = Name("k", 0)
_h_a = App("h", (_pa,))
_pair_ab = App("pair", (_pa, _pb))


def _F(name: str, *args: Term, persistent: bool = False) -> Fact:
    return Fact(name, tuple(args), persistent)


# (name, before, rule, binding, after, error-fragment).  Exactly one of
# after/error is set; states are (fact, count) lists.
STEP_CASES = [
    (
        "move-one",
        [(_F("A", _n0), 1)],
        "Move",
        {"x": _n0},
        [(_F("B", _n0), 1)],
        None,
    ),
    (
        "move-one-of-two",
        [(_F("A", _n0), 2)],
        "Move",
        {"x": _n0},
        [(_F("A", _n0), 1), (_F("B", _n0), 1)],
        None,
    ),
    (
        "move-keeps-sibling",
        [(_F("A", _n0), 1), (_F("A", _n1), 1)],
        "Move",
        {"x": _n0},
        [(_F("A", _n1), 1), (_F("B", _n0), 1)],
        None,
    ),
    (
        "two-premises-same-fact",
        [(_F("A", _n0), 2)],
        "Dup2",
        {"x": _n0, "y": _n0},
        [(_F("Pair2", _n0, _n0), 1)],
        None,
    ),
    (
        "two-premises-distinct",
        [(_F("A", _n0), 1), (_F("A", _n1), 1)],
        "Dup2",
        {"x": _n0, "y": _n1},
        [(_F("Pair2", _n0, _n1), 1)],
        None,
    ),
    (
        "persistent-premise-kept",
        [(_F("Ltk", _k0, persistent=True), 1)],
        "Keep",
        {"k": _k0},
        [(_F("Ltk", _k0, persistent=True), 1), (_F("S1", _k0), 1)],
        None,
    ),
    (
        "persistent-conclusion-dedups",
        [(_F("Ltk", _k0, persistent=True), 1)],
        "ReLtk",
        {"k": _k0},
        [(_F("Ltk", _k0, persistent=True), 1), (_F("S1", _k0), 1)],
        None,
    ),
    (
        "fresh-instantiation",
        [],
        "MkLtk",
        {"k": Name("k", 7)},
        [(_F("Ltk", Name("k", 7), persistent=True), 1)],
        None,
    ),
    (
        "fresh-name-already-in-state",
        [(_F("Ltk", _k0, persistent=True), 1)],
        "MkLtk",
        {"k": _k0},
        None,
        "not fresh",
    ),
    (
        "fresh-name-bound-twice",
        [],
        "Gen",
        {"x": Name("x", 3), "y": Name("x", 3)},
        None,
        "bound twice",
    ),
    (
        "fresh-must-be-a-name",
        [],
        "MkLtk",
        {"k": _pa},
        None,
        "fresh name",
    ),
    (
        "missing-premise",
        [],
        "Move",
        {"x": _pa},
        None,
        "premise not in state",
    ),
    (
        "insufficient-multiplicity",
        [(_F("A", _n0), 1)],
        "Dup2",
        {"x": _n0, "y": _n0},
        None,
        "premise not in state",
    ),
    (
        "persistent-premise-missing",
        [],
        "Keep",
        {"k": _k0},
        None,
        "premise not in state",
    ),
    (
        "input-consumed",
        [(_F("In", _pa), 1)],
        "Recv",
        {"x": _pa},
        [(_F("Got", _pa), 1)],
        None,
    ),
    (
        "output-produced",
        [(_F("A", _pb), 1)],
        "Send",
        {"x": _pb},
        [(_F("Out", _pb), 1)],
        None,
    ),
    (
        "actions-left-out-of-state",
        [(_F("A", _pa), 1)],
        "Note",
        {"x": _pa},
        [(_F("A", _pa), 1)],
        None,
    ),
    (
        "conclusion-normalized",
        [(_F("A", _pair_ab), 1)],
        "Fst",
        {"x": _pair_ab},
        [(_F("B", _pa), 1)],
        None,
    ),
    (
        "binding-normalized",
        [(_F("A", _pa), 1)],
        "Move",
        {"x": App("fst", (_pair_ab,))},
        [(_F("B", _pa), 1)],
        None,
    ),
    (
        "binding-missing-variable",
        [(_F("A", _n0), 1)],
        "Move",
        {},
        None,
        "missing variables",
    ),
    (
        "binding-not-ground",
        [(_F("A", _n0), 1)],
        "Move",
        {"x": Var("z")},
        None,
        "not ground",
    ),
    (
        "deduction-absorb-output",
        [(_F("Out", _h_a), 1)],
        "md_out",
        {"x": _h_a},
        [(_F("K", _h_a), 1)],
        None,
    ),
    (
        "deduction-inject-keeps-knowledge",
        [(_F("K", _h_a), 1)],
        "md_in",
        {"x": _h_a},
        [(_F("K", _h_a), 1), (_F("In", _h_a), 1)],
        None,
    ),
    (
        "deduction-pair-retains-parts",
        [(_F("K", _pa), 1), (_F("K", _pb), 1)],
        "md_apply_pair",
        {"x0": _pa, "x1": _pb},
        [(_F("K", _pa), 1), (_F("K", _pb), 1), (_F("K", _pair_ab), 1)],
        None,
    ),
    (
        "deduction-public-constant",
        [],
        "md_pub_a",
        {},
        [(_F("K", _pa), 1)],
        None,
    ),
    (
        "component-boundary-out",
        [(_F("ind", _pc, _h_a), 1)],
        "mdind_out",
        {"rid": _pc, "x": _h_a},
        [(_F("ind", _pc, _h_a), 1), (_F("out_ind", _pc, _h_a), 1)],
        None,
    ),
    (
        "boundary-buffer-consumed",
        [(_F("out_ind", _pc, _h_a), 1)],
        "sync_out",
        {"rid": _pc, "x": _h_a},
        [(_F("K", _h_a), 1)],
        None,
    ),
    (
        "component-deduction-retains",
        [(_F("ind", _pc, _pa), 1)],
        "mdind_apply_h",
        {"rid": _pc, "x0": _pa},
        [(_F("ind", _pc, _pa), 1), (_F("ind", _pc, _h_a), 1)],
        None,
    ),
    (
        "let-expansion-signs-payload",
        [(_F("St", Pub("c"), _k0), 1), (_F("VIn_m", _pa), 1)],
        "Wrap",
        {"r": Pub("c"), "k": _k0, "m": _pa},
        [
            (_F("St", Pub("c"), _k0), 1),
            (_F("Out", App("pair", (_pa, App("sign", (_pa, _k0))))), 1),
        ],
        None,
    ),
]


def state_of(pairs) -> MsrState:
    return MsrState.from_counter(Counter(dict(pairs)))
