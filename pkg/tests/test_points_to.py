"""Points-to analysis: frozen hand-derived solutions plus runtime soundness."""

import pytest
from hypothesis import given, settings, strategies as st

from corefence.escape import compute_escape
from corefence.ghost import instrument
from corefence.interp import Machine
from corefence.lang import parse_program
from corefence.passthrough import compute_passthrough
from corefence.points_to import (
    KIND_APP,
    KIND_INSTANCE,
    KIND_RET,
    compute_points_to,
    disjoint_args,
    reach_static,
    ret_site,
    to_json,
)

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
    return prog, compute_points_to(prog)


def test_chain_solution_frozen(chain):
    _, sol = chain
    expected = {
        "a": {"L0"},
        "b": {"L1"},
        "c": {"L3"},
        "p": {"L0"},  # copy of a
        "q": {"L1"},  # loaded from cells of a
        "d": {"L8"},
        "r": {"L9#r0"},
    }
    for var, sites in expected.items():
        assert sol.pts_of(var) == frozenset(sites), var
    assert sol.contents["L0"] == frozenset({"L1"})
    assert sol.contents["L8"] == frozenset({"L9#r0"})
    assert sol.site_kinds == {
        "L0": KIND_APP,
        "L1": KIND_APP,
        "L3": KIND_INSTANCE,
        "L8": KIND_APP,
        "L9#r0": KIND_RET,
    }


def test_chain_reach(chain):
    _, sol = chain
    assert reach_static(sol, sol.pts_of("a")) == {"L0", "L1"}
    assert reach_static(sol, sol.pts_of("b")) == {"L1"}
    assert reach_static(sol, sol.pts_of("d")) == {"L8", "L9#r0"}


def test_scalars_have_empty_pts(chain):
    _, sol = chain
    assert sol.pts_of("k") == frozenset()


def test_ret_site_format():
    assert ret_site("L9", 0) == "L9#r0"
    assert ret_site("L9", 1) == "L9#r1"


def test_disjoint_args():
    prog = parse_program(
        """
core_api 0 "send"
x := new()
y := x
z := new()
c := core_alloc(x, y, z)
"""
    )
    sol = compute_points_to(prog)
    call = prog.body[-1]
    verdicts = dict()
    for i, j, ok in disjoint_args(sol, call.args):
        verdicts[(i, j)] = ok
    assert verdicts[(0, 1)] is False  # x and y alias
    assert verdicts[(0, 2)] is True
    assert verdicts[(1, 2)] is True


def test_nil_args_always_disjoint():
    prog = parse_program(
        """
core_api 0 "send"
x := new()
c := core_alloc(x, nil, nil)
"""
    )
    sol = compute_points_to(prog)
    call = prog.body[-1]
    assert all(ok for _, _, ok in disjoint_args(sol, call.args))


def test_deterministic(chain):
    prog, sol = chain
    again = compute_points_to(prog)
    assert to_json(again) == to_json(sol)


def _runtime_pts_violations(prog):
    """Run one deterministic interleaving, checking every bound address
    against the static solution at every statement boundary."""
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    pmap = compute_passthrough(prog, sol)
    m = Machine(
        instrument(prog),
        req_checks=False,
        static=(sol, esc, pmap),
        max_steps=400,
    )
    res = m.run()
    return [v for v in res.cross_violations if v.kind in ("pts", "heap-pts")]


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_runtime_soundness_random(seed):
    prog = random_program(seed, n_stmts=14, allow_fork=True, allow_loop=True)
    assert _runtime_pts_violations(prog) == []


def test_runtime_soundness_chain(chain):
    prog, _ = chain
    assert _runtime_pts_violations(prog) == []
