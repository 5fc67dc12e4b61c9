"""Escape analysis tests: frozen flow-sensitive maps, growth discipline, and
runtime corroboration (a cell reachable from two threads must have an
escaped allocation site)."""

import pytest
from hypothesis import given, settings, strategies as st

from corefence.escape import compute_escape, compute_eventually_escaped
from corefence.ghost import instrument
from corefence.interp import Machine
from corefence.lang import Fork, parse_program, walk
from corefence.passthrough import compute_passthrough
from corefence.points_to import compute_points_to

from genprog import random_program

CHAIN = """
input k secret
core_api 0 "send"

a := new()
b := new()
*a := b
c := core_alloc(a)
p := a
fork(p) {
  q := *p
  *q := 3
}
d := new()
r := core_call 0 on c (d)
*d := r
"""


@pytest.fixture(scope="module")
def chain():
    prog = parse_program(CHAIN)
    sol = compute_points_to(prog)
    return prog, sol, compute_escape(prog, sol)


def test_fork_escapes_captured_reach(chain):
    _, _, esc = chain
    # the fork at L5 captures p -> {L0}, whose reach is {L0, L1}
    assert esc.escaped_at("L5", "pre") == frozenset()
    assert esc.escaped_at("L5", "post") == frozenset({"L0", "L1"})
    assert esc.escaped_at("L8", "pre") == frozenset({"L0", "L1"})


def test_nothing_escapes_before_fork(chain):
    _, _, esc = chain
    for lab in ("L0", "L1", "L2", "L3", "L4"):
        assert esc.escaped_at(lab, "pre") == frozenset()
        assert esc.escaped_at(lab, "post") == frozenset()


def test_eventually_is_fixpoint(chain):
    prog, sol, esc = chain
    assert esc.eventually == frozenset({"L0", "L1"})
    assert compute_eventually_escaped(prog, sol) == esc.eventually


def test_locality_verdicts(chain):
    _, _, esc = chain
    assert esc.is_local("a", "L3", "pre") is True
    assert esc.is_local("a", "L8", "pre") is False  # escaped by the fork
    assert esc.is_local("d", "L8", "post") is True
    # nil and scalars are trivially local
    assert esc.is_local("k", "L10", "post") is True


def test_store_into_escaped_cell_escapes_reach():
    prog = parse_program(
        """
s := new()
fork(s) {
  skip
}
x := new()
y := new()
*x := y
*s := x
v := 1
"""
    )
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    # before the store into the shared cell, x and y are private
    assert esc.escaped_at("L5", "pre") == frozenset({"L0"})
    # storing x into escaped s drags x and everything x reaches out
    assert esc.escaped_at("L6", "post") == frozenset({"L0", "L3", "L4"})


def test_fork_body_sees_eventual_escapes():
    # the child must treat cells the parent escapes *later* as escaped:
    # analysis of the child body starts from the eventual fixpoint
    prog = parse_program(
        """
a := new()
b := new()
fork(a, b) {
  v := *a
}
fork(b) {
  skip
}
"""
    )
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    assert esc.escaped_at("L3", "pre") >= frozenset({"L0", "L1"})


def _boundaries(prog, esc):
    for s in walk(prog.body):
        yield s.label, esc.escaped_at(s.label, "pre"), esc.escaped_at(s.label, "post")


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_escape_growth_and_bounds(seed):
    prog = random_program(seed, n_stmts=14, allow_fork=True, allow_loop=True)
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    for label, pre, post in _boundaries(prog, esc):
        assert pre <= post, label  # a statement never un-escapes a site
        assert post <= esc.eventually, label


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_runtime_escape_soundness(seed):
    prog = random_program(seed, n_stmts=14, allow_fork=True)
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    pmap = compute_passthrough(prog, sol)
    m = Machine(instrument(prog), req_checks=False, static=(sol, esc, pmap), max_steps=400)
    res = m.run()
    bad = [v for v in res.cross_violations if v.kind == "escape"]
    assert bad == []


def test_straightline_program_escapes_nothing():
    prog = parse_program("x := new()\ny := new()\n*x := y\nv := *x\n")
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    assert esc.eventually == frozenset()
    if any(isinstance(s, Fork) for s in walk(prog.body)):  # pragma: no cover
        raise AssertionError("fixture must stay fork-free")
