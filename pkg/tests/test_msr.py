"""Multiset rewriting: term algebra and normalization, rule application
against hand-worked multisets, bounded exploration with attack witnesses,
deduction replay under the renaming, and role I/O automata."""

from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from corefence.msr import (
    FUNCTIONS,
    App,
    AttackWitness,
    Fact,
    Knowledge,
    MsrError,
    MsrParseError,
    MsrState,
    Name,
    Pub,
    Var,
    apply_rule,
    derive_match,
    explore_traces,
    match_term,
    normalize,
    parse_model,
    parse_term,
    render_fact,
    render_rule,
    render_term,
    role_iospec,
    simulate_independent,
    term_key,
    unify,
)

from gentrace import random_trace
from msr_cases import STEP_CASES, cases_model, state_of

MODELS = Path(__file__).resolve().parent.parent / "corpus" / "models"


@pytest.fixture(scope="module")
def mac_model():
    return parse_model((MODELS / "mac.msr").read_text())


@pytest.fixture(scope="module")
def dh_model():
    return parse_model((MODELS / "signed_dh.msr").read_text())


@pytest.fixture(scope="module")
def pitm_model():
    return parse_model((MODELS / "signed_dh_pitm.msr").read_text())


# --------------------------------------------------------------------------
# terms


def test_parse_term_structure():
    t = parse_term("<m, sign(m, k)>")
    assert t == App("pair", (Var("m"), App("sign", (Var("m"), Var("k")))))


def test_angle_lists_nest_right():
    t = parse_term("<a, b, c>", pubs={"a", "b", "c"})
    assert t == App("pair", (Pub("a"), App("pair", (Pub("b"), Pub("c")))))


def test_quoted_constants_are_public():
    assert parse_term("'Chal'") == Pub("Chal")
    assert parse_term("g") == Pub("g")  # built-in


def test_undeclared_identifier_is_a_variable():
    assert parse_term("nb") == Var("nb")


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("sign(x)", "expects 2 arguments"),
        ("frob(x)", "unknown function"),
        ("~n.0", "cannot parse"),
        ("<m", "cannot parse|expected"),
    ],
)
def test_parse_term_errors(text, fragment):
    with pytest.raises(MsrParseError):
        parse_term(text)


_LEAVES = st.sampled_from(
    [Pub("a"), Pub("g"), Pub("ok"), Var("x"), Var("y"), Name("n", 0), Name("n", 1)]
)


def _apps(sub):
    return st.sampled_from(sorted(FUNCTIONS)).flatmap(
        lambda fn: st.tuples(*([sub] * FUNCTIONS[fn])).map(lambda a: App(fn, a))
    )


TERMS = st.recursive(_LEAVES, _apps, max_leaves=10)


@given(TERMS)
@settings(max_examples=150, deadline=None)
def test_normalize_idempotent(t):
    assert normalize(normalize(t)) == normalize(t)


@given(st.recursive(st.sampled_from([Pub("a"), Var("x"), Var("y")]), _apps, max_leaves=8))
@settings(max_examples=150, deadline=None)
def test_render_parse_round_trip(t):
    assert parse_term(render_term(t), pubs={"a"}) == t


@pytest.mark.parametrize(
    "text,expected",
    [
        ("fst(<x, y>)", "x"),
        ("snd(<x, y>)", "y"),
        ("sdec(senc(p, k), k)", "p"),
        ("adec(aenc(p, pk(sk)), sk)", "p"),
        ("verify(sign(m, sk), m, pk(sk))", "'ok'"),
        # non-redexes stay put
        ("sdec(senc(p, k1), k2)", "sdec(senc(p, k1), k2)"),
        ("verify(sign(m, sk), m2, pk(sk))", "verify(sign(m, sk), m2, pk(sk))"),
        ("fst(x)", "fst(x)"),
    ],
)
def test_equations(text, expected):
    assert render_term(normalize(parse_term(text))) == expected


def test_exponent_commutation_orders_by_term_key():
    a, b = Name("a", 0), Name("b", 0)
    lhs = App("exp", (App("exp", (Pub("g"), b)), a))
    rhs = App("exp", (App("exp", (Pub("g"), a)), b))
    assert term_key(a) < term_key(b)
    assert normalize(lhs) == rhs
    assert normalize(rhs) == rhs
    # only over base g, and only one level
    other = App("exp", (App("exp", (Pub("h2"), b)), a))
    assert normalize(other) == other


def test_term_key_orders_by_kind():
    ts = [App("h", (Pub("a"),)), Name("n", 0), Pub("a"), Var("x")]
    assert [render_term(t) for t in sorted(ts, key=term_key)] == [
        "x",
        "'a'",
        "~n.0",
        "h('a')",
    ]


def test_match_is_one_way():
    p = parse_term("<m, sign(m, k)>")
    t = parse_term("<'a', sign('a', 'b')>", pubs={"a", "b"})
    assert match_term(p, t) == {"m": Pub("a"), "k": Pub("b")}
    assert match_term(p, parse_term("<'a', sign('b', 'b')>", pubs={"a", "b"})) is None
    # an existing binding constrains the match
    assert match_term(p, t, {"k": Pub("c")}) is None


def test_unify_has_occurs_check():
    assert unify(Var("x"), App("h", (Var("x"),))) is None
    env = unify(parse_term("<x, 'u'>", pubs={"u"}), parse_term("<'t', y>", pubs={"t", "u"}))
    assert env == {"x": Pub("t"), "y": Pub("u")}


# --------------------------------------------------------------------------
# states


def test_state_is_canonical_multiset():
    a, b = Fact("A", (Pub("a"),)), Fact("B", (Pub("b"),))
    assert MsrState.of(a, b) == MsrState.of(b, a)
    assert MsrState.of(a, a).count(a) == 2


def test_persistent_facts_cap_at_one():
    k = Fact("K", (Pub("a"),))
    assert k.persistent  # forced for reserved symbols
    assert MsrState.of(k, k).count(k) == 1


@given(st.lists(st.sampled_from([
    Fact("A", (Pub("a"),)),
    Fact("A", (Name("n", 0),)),
    Fact("B", ()),
    Fact("K", (Pub("a"),)),
]), max_size=6), st.randoms())
@settings(max_examples=80, deadline=None)
def test_state_construction_order_irrelevant(facts, rng):
    shuffled = list(facts)
    rng.shuffle(shuffled)
    assert MsrState.of(*facts) == MsrState.of(*shuffled)
    assert hash(MsrState.of(*facts)) == hash(MsrState.of(*shuffled))


# --------------------------------------------------------------------------
# rule application (hand-worked cases)


@pytest.mark.parametrize(
    "name,before,rule,binding,after,error",
    STEP_CASES,
    ids=[c[0] for c in STEP_CASES],
)
def test_rule_application(name, before, rule, binding, after, error):
    model = cases_model()
    r = model.rule_named(rule)
    s = state_of(before)
    if error is not None:
        with pytest.raises(MsrError, match=error):
            apply_rule(s, r, binding)
    else:
        assert apply_rule(s, r, binding) == state_of(after)


def test_case_table_is_large_enough():
    assert len(STEP_CASES) >= 20
    assert any("persistent" in c[0] for c in STEP_CASES)


# --------------------------------------------------------------------------
# model parsing


def test_mac_model_inventory(mac_model):
    assert [r.name for r in mac_model.role_rules] == [
        "Gen_Psk",
        "Alice_Init",
        "Env_Msg",
        "Alice_Send",
        "Alice_Recv",
        "Env_Rel",
    ]
    # deduction families are generated: base rules + one per public constant
    # (only the built-ins here) + one per function symbol
    assert len(mac_model.md_rules) == 3 + 2 + len(FUNCTIONS)
    assert len(mac_model.mdind_rules) == 5 + 2 + len(FUNCTIONS)


def test_let_bindings_expand(mac_model):
    send = mac_model.rule_named("Alice_Send")
    out = [f for f in send.concs if f.name == "Out"]
    assert len(out) == 1
    assert render_term(out[0].args[0]) == "<msg, sign(msg, psk)>"


def test_empty_model_has_only_deduction_rules():
    m = parse_model("// nothing here\n")
    assert m.role_rules == ()
    assert m.rule_named("md_out").family == "md"


def test_declared_pubs_resolve_bare_identifiers(dh_model):
    chal = dh_model.rule_named("B_Chal")
    assert render_fact(chal.concs[1]) == "Out(<'Chal', ~nb>)" or "Chal" in render_fact(
        chal.concs[1]
    )


def test_render_rule_reparses(mac_model):
    src = render_rule(mac_model.rule_named("Env_Rel"))
    again = parse_model(src).rule_named("Env_Rel")
    assert again.prems == mac_model.rule_named("Env_Rel").prems


@pytest.mark.parametrize(
    "source,fragment",
    [
        ("rule X: [ K(x) ] ---> [ A(x) ]", "reserved"),
        ("rule X: [ A(x), Out(x) ] ---> [ B(x) ]", "Out cannot appear in premises"),
        ("rule X: [ A(x) ] ---> [ In(x) ]", "In cannot appear in conclusions"),
        ("rule X: [ A(x) ] ---> [ Fr(x) ]", "Fr cannot appear in conclusions"),
        ("rule X: [ Fr(h(x)) ] ---> [ A(x) ]", "Fr takes a single variable"),
        ("rule X: [ !In(x) ] ---> [ A(x) ]", "In facts are linear"),
        ("rule X: [ A(x), A(x, x) ] ---> [ B(x) ]", "elsewhere with"),
        ("rule X: [ A(x), !A(x) ] ---> [ B(x) ]", "inconsistent persistence"),
        ("rule X: [ A(x) ] ---> [ B(x) ]\nrule X: [ B(x) ] ---> [ A(x) ]", "duplicate rule name"),
        ("rule X: [ A(x) ] ---> [ B(y) ]", "not bound by premises"),
        ("rule md_evil: [ A(x) ] ---> [ B(x) ]", "reserved prefix"),
        ("rule X: [ A(sign(x)) ] ---> [ B(x) ]", "expects 2 arguments"),
    ],
)
def test_parse_model_rejects(source, fragment):
    with pytest.raises(MsrParseError, match=fragment):
        parse_model(source)


# --------------------------------------------------------------------------
# attacker knowledge


def test_saturation_decomposes():
    n0, n1 = Name("s", 0), Name("s", 1)
    base = App("pair", (n0, App("senc", (n1, n0))))
    know = Knowledge((), [base])
    assert know.derivable(n0)
    assert know.derivable(n1)  # key recovered from the pair, then decrypt
    assert know.derivable(App("h", (n1,)))
    assert not know.derivable(Name("s", 2))


def test_saturation_uses_private_decryption_keys():
    sk, p = Name("sk", 0), Name("p", 0)
    c = App("aenc", (p, App("pk", (sk,))))
    assert not Knowledge((), [c]).derivable(p)
    assert Knowledge((), [c, sk]).derivable(p)


def test_deduction_plans_replay(mac_model):
    n0, n1 = Name("s", 0), Name("s", 1)
    know = Knowledge((), [App("pair", (n0, n1))])
    target = App("sign", (App("h", (n0,)), n1))
    plan = know.deduction_plan(target, set(know.base))
    state = MsrState.of(*(Fact("K", (t,)) for t in know.base))
    for rule_name, binding in plan:
        state = apply_rule(state, mac_model.rule_named(rule_name), binding)
    assert Fact("K", (target,)) in state


def test_derive_match_is_deterministic():
    n0 = Name("s", 0)
    know = Knowledge(("a",), [App("pair", (n0, App("h", (n0,))))])
    pat = parse_term("<x, h(x)>")
    first = derive_match(pat, {}, know)
    assert {"x": n0} in first
    assert first == derive_match(pat, {}, know)
    keys = [tuple(sorted((v, term_key(t)) for v, t in b.items())) for b in first]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)


# --------------------------------------------------------------------------
# bounded exploration


def test_leaked_secret_found_with_two_step_witness():
    m = parse_model("rule Leak: [ Fr(k) ] --[ Secret(k) ]-> [ Out(k) ]")
    rep = explore_traces(m, 4)
    assert rep.verdict == "attack found: secrecy"
    assert rep.attack is not None and rep.attack.depth == 1
    assert [s for s, _ in rep.attack.steps] == ["Leak", "md_out"]
    # the witness replays step by step
    state = MsrState.of()
    for rule_name, binding in rep.attack.steps:
        state = apply_rule(state, m.rule_named(rule_name), dict(binding))
    k = dict(rep.attack.steps[0][1])["k"]
    assert Fact("K", (k,)) in state


def test_corrupt_marks_suppress_secrecy():
    m = parse_model("rule Leak: [ Fr(k) ] --[ Secret(k), Corrupt(k) ]-> [ Out(k) ]")
    rep = explore_traces(m, 4)
    assert rep.attack is None
    assert rep.verdict == "no attack within bound"


def test_unreachable_rules_exhaust_the_space():
    m = parse_model("rule Stuck: [ Boot(x) ] ---> [ Out(x) ]")
    rep = explore_traces(m, 6)
    assert rep.verdict == "no attack: state space exhausted"
    assert rep.states == 1 and rep.transitions == 0 and rep.exhausted


def test_commit_without_running_is_an_attack():
    m = parse_model("rule Bad: [ Fr(x) ] --[ Commit(x) ]-> [ ]")
    rep = explore_traces(m, 3, queries=("agreement",))
    assert rep.verdict == "attack found: agreement"
    assert [s for s, _ in rep.attack.steps] == ["Bad"]


def test_matched_running_commit_is_quiet_until_duplicated():
    src = """
rule Start: [ Fr(x) ] --[ Running(x) ]-> [ T(x), T(x) ]
rule Do:    [ T(x) ] --[ Commit(x) ]-> [ ]
"""
    rep = explore_traces(parse_model(src), 3, queries=("agreement",))
    assert rep.verdict == "attack found: agreement"
    assert [s for s, _ in rep.attack.steps] == ["Start", "Do", "Do"]
    single = "rule S2: [ Fr(x) ] --[ Running(x), Commit(x) ]-> [ ]"
    assert explore_traces(parse_model(single), 3, queries=("agreement",)).attack is None


def test_state_cap_truncates_search():
    m = parse_model("rule Spin: [ Fr(x) ] ---> [ N(x) ]")
    rep = explore_traces(m, 8, max_states=3)
    assert rep.verdict == "search truncated: state cap reached"
    assert not rep.exhausted


def test_mac_secrecy_holds_to_depth_12(mac_model):
    rep = explore_traces(mac_model, 12)
    assert rep.attack is None
    assert rep.verdict == "no attack within bound"
    assert rep.exhausted  # the cap was never hit; the bound was
    assert rep.states > 1000


def test_exploration_is_deterministic(mac_model):
    a = explore_traces(mac_model, 6).to_json()
    b = explore_traces(parse_model((MODELS / "mac.msr").read_text()), 6).to_json()
    assert a == b


def test_clean_handshake_has_no_agreement_attack(dh_model):
    rep = explore_traces(dh_model, 6, queries=("agreement",))
    assert rep.attack is None


@pytest.mark.slow
def test_unsigned_recipient_breaks_agreement(pitm_model):
    rep = explore_traces(pitm_model, 7, queries=("agreement",))
    assert rep.verdict == "attack found: agreement"
    att = rep.attack
    assert att.depth <= 7
    names = [s for s, _ in att.steps]
    assert "A_Init" in names and "B_Resp" in names
    # the witness replays: B commits on a handshake A never ran with B
    state = MsrState.of()
    for rule_name, binding in att.steps:
        state = apply_rule(state, pitm_model.rule_named(rule_name), dict(binding))
    a_init = dict(att.steps[names.index("A_Init")][1])
    assert a_init["peer"] != Pub("B")


# --------------------------------------------------------------------------
# deduction replay under the renaming


def test_component_deduction_replays(mac_model):
    rid = Pub("ok")
    n = Name("x", 0)
    h_n = App("h", (n,))
    trace = [
        ("mdind_fresh", {"x": n, "rid": rid}),
        ("mdind_apply_h", {"x0": n, "rid": rid}),
        ("mdind_out", {"x": h_n, "rid": rid}),
        ("sync_out", {"x": h_n, "rid": rid}),
        ("md_in", {"x": h_n}),
    ]
    rep = simulate_independent(mac_model, trace)
    assert rep.ok
    assert [s.abstract_action for s in rep.steps] == [
        "md_fresh",
        "md_apply_h",
        "epsilon",
        "epsilon",
        "same-rule",
    ]


def test_role_steps_replay_as_themselves(mac_model):
    psk = Name("psk", 0)
    rid = Name("rid", 1)
    trace = [
        ("Gen_Psk", {"psk": psk}),
        ("Alice_Init", {"psk": psk, "rid": rid}),
    ]
    rep = simulate_independent(mac_model, trace)
    assert rep.ok and all(s.abstract_action == "same-rule" for s in rep.steps)


def test_invalid_concrete_step_is_reported(mac_model):
    n = Name("x", 0)
    rid = Pub("ok")
    bad = [("md_fresh", {"x": n}), ("mdind_fresh", {"x": n, "rid": rid})]
    rep = simulate_independent(mac_model, bad)
    assert not rep.ok and rep.failed_at == 1
    assert "not fresh" in rep.reason


def test_random_composed_traces_replay(mac_model):
    for seed in range(60):
        trace = random_trace(mac_model, seed, max_len=10)
        rep = simulate_independent(mac_model, trace)
        assert rep.ok, f"seed {seed} failed at {rep.failed_at}: {rep.reason}"


def test_random_traces_mix_families(mac_model):
    families = set()
    for seed in range(60):
        for rule_name, _ in random_trace(mac_model, seed, max_len=10):
            families.add(mac_model.rule_named(rule_name).family)
    assert families == {"role", "md", "mdind"}


# --------------------------------------------------------------------------
# role I/O automata


def test_alice_automaton_shape(mac_model):
    auto = role_iospec(mac_model, "Alice")
    assert auto.initial == "start"
    assert set(auto.states) == {"start", "Alice_1", "Alice_Send:1", "Alice_Recv:1"}
    hops = {(t.src, t.event.direction, t.dst) for t in auto.transitions}
    assert hops == {
        ("start", "vin", "Alice_1"),
        ("Alice_1", "vin", "Alice_Send:1"),
        ("Alice_Send:1", "out", "Alice_1"),
        ("Alice_1", "in", "Alice_Recv:1"),
        ("Alice_Recv:1", "vout", "Alice_1"),
    }
    out = [t for t in auto.transitions if t.event.direction == "out"]
    assert [render_term(p) for p in out[0].event.patterns] == ["<msg, sign(msg, psk)>"]
    assert auto.warnings == ()


def test_alice_receive_uses_its_own_run_variable(mac_model):
    auto = role_iospec(mac_model, "Alice")
    recv = [t for t in auto.transitions if t.rule == "Alice_Recv" and t.event.direction == "in"]
    assert render_term(recv[0].event.patterns[0]) == "<msg_1, sign(msg_1, psk)>"


def test_initiator_automaton_has_three_phases(dh_model):
    auto = role_iospec(dh_model, "A")
    seq = [(t.src, t.event.direction, t.dst) for t in auto.transitions]
    # handshake send: two inputs then the signed ephemeral goes out
    assert seq[:3] == [
        ("start", "in", "A_Init:1"),
        ("A_Init:1", "in", "A_Init:2"),
        ("A_Init:2", "out", "A_1"),
    ]
    # handshake receive
    assert ("A_1", "in", "A_2") in seq
    # transport: two loops through A_2
    loops = [s for s in seq if s[0].startswith("A_2") or s[2] == "A_2"]
    assert ("A_2", "vin", "A_SendT:1") in seq and ("A_SendT:1", "out", "A_2") in seq
    assert ("A_2", "in", "A_RecvT:1") in seq and ("A_RecvT:1", "vout", "A_2") in seq


def test_unknown_role_gives_empty_automaton(mac_model):
    auto = role_iospec(mac_model, "Nobody")
    assert auto.states == ("start",) and auto.transitions == ()


def test_non_chain_roles_are_rejected():
    m = parse_model("rule R_Two: [ R_1(x), R_2(x) ] ---> [ R_3(x), Out(x) ]")
    with pytest.raises(MsrError, match="chain-structured"):
        role_iospec(m, "R")


def test_event_free_role_rules_are_rejected():
    m = parse_model("rule R_Go: [ Fr(x) ] ---> [ R_1(x) ]")
    with pytest.raises(MsrError, match="no I/O events"):
        role_iospec(m, "R")


def test_overlapping_inputs_warn():
    src = """
pub t, u
rule P_Go: [ In(z) ] ---> [ P_1(z) ]
rule P_A:  [ P_1(x), In(<'t', y>) ] ---> [ P_1(x), VOut_a(y) ]
rule P_B:  [ P_1(x), In(<w, 'u'>) ] ---> [ P_1(x), VOut_b(w) ]
"""
    auto = role_iospec(parse_model(src), "P")
    assert any("P_A" in w and "P_B" in w for w in auto.warnings)


# --------------------------------------------------------------------------
# reports


def test_witness_serialization_shape():
    m = parse_model("rule Leak: [ Fr(k) ] --[ Secret(k) ]-> [ Out(k) ]")
    rep = explore_traces(m, 3)
    d = rep.to_dict()
    assert d["verdict"] == "attack found: secrecy"
    assert d["attack"]["length"] == len(rep.attack.steps)
    assert d["attack"]["steps"][0]["rule"] == "Leak"
    assert set(d) == {
        "verdict",
        "attack",
        "states",
        "transitions",
        "depth_bound",
        "bound_hit",
        "exhausted",
        "queries",
    }
