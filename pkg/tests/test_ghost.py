"""Instrumentation: exact brackets per statement form, and erasability both
structurally (strip) and textually (ghost lines are parser-invisible)."""

from hypothesis import given, settings, strategies as st

from corefence.ghost import (
    SGH,
    SIH,
    SLH,
    FlagMark,
    MoveReach,
    SetAdd,
    SetAddMany,
    SetRemove,
    SetRemoveMany,
    instrument,
    print_instrumented,
    strip,
)
from corefence.lang import parse_program, print_program

from genprog import random_program

FULL = """
input psk secret
core_api 0 "send"

buf := new()
*buf := psk
c := core_alloc(buf)
m := new()
v := *m
r1, r2 := core_call 0 on c (m, nil)
fork(m) {
  w := *m
}
io "log" (r1) caps[net_write]
"""


def _by_label(ip):
    out = {}

    def visit(instrs):
        for i in instrs:
            out[i.label] = i
            for block in i.sub.values():
                visit(block)

    visit(ip.body)
    return out


def test_alloc_bracket():
    ip = instrument(parse_program("x := new()\n"))
    i = ip.body[0]
    assert i.pre == ()
    assert i.post == (SetAdd(SLH, "x"),)
    assert i.access is None


def test_read_bracket_dispatches_on_source():
    ip = instrument(parse_program("x := new()\nv := *x\n"))
    plan = ip.body[1].access
    assert plan is not None
    assert plan.dispatch_var == "x"
    assert plan.local_pre == (SetRemove(SLH, "x"),)
    assert plan.local_post == (SetAdd(SLH, "x"),)
    assert plan.global_atomic_pre.ops == (SetRemove(SGH, "x"),)
    assert plan.global_atomic_post.ops == (SetAdd(SGH, "x"),)


def test_write_bracket_moves_reach_of_stored_value():
    ip = instrument(parse_program("x := new()\ny := new()\n*x := y\n"))
    plan = ip.body[2].access
    assert plan is not None
    assert plan.dispatch_var == "x"
    gpre = plan.global_atomic_pre.ops
    assert gpre[0] == SetRemove(SGH, "x")
    assert isinstance(gpre[1], MoveReach)
    assert plan.global_atomic_post.ops == (SetAdd(SGH, "x"),)


def test_corealloc_bracket():
    ip = instrument(parse_program('core_api 0 "f"\nx := new()\nc := core_alloc(x, nil)\n'))
    i = ip.body[1]
    assert i.pre == (FlagMark(), SetRemoveMany(SLH, ("x", "nil")))
    assert i.post == (SetAddMany(SLH, ("x", "nil")), SetAdd(SIH, "c"))


def test_corecall_bracket():
    ip = instrument(
        parse_program('core_api 0 "f"\nx := new()\nc := core_alloc()\nr := core_call 0 on c (x)\n')
    )
    i = ip.body[2]
    assert i.pre == (SetRemove(SIH, "c"), SetRemoveMany(SLH, ("x",)))
    assert i.post == (SetAddMany(SLH, ("x", "r")), SetAdd(SIH, "c"))


def test_fork_bracket_moves_captured_reach():
    ip = instrument(parse_program("x := new()\nfork(x) {\n  skip\n}\n"))
    i = ip.body[1]
    assert len(i.pre) == 1 and isinstance(i.pre[0], MoveReach)
    assert [j.stmt.label for j in i.sub["body"]] == ["L2"]


def test_neutral_statements_have_no_ops():
    ip = instrument(parse_program('v := 1\nio "x" (v) caps[]\nskip\n'))
    for i in ip.body:
        assert i.pre == () and i.post == () and i.access is None


def test_strip_recovers_program():
    prog = parse_program(FULL)
    assert print_program(strip(instrument(prog))) == print_program(prog)


def test_printed_ghost_lines_are_erasable():
    prog = parse_program(FULL)
    text = print_instrumented(instrument(prog))
    assert "//@" in text
    assert print_program(parse_program(text)) == print_program(prog)


def test_ghost_lines_marked_on_every_op():
    prog = parse_program(FULL)
    for line in print_instrumented(instrument(prog)).splitlines():
        stripped = line.strip()
        for name in (SLH, SIH, SGH, "used"):
            if stripped.startswith(name):  # pragma: no cover - defensive
                raise AssertionError(f"unmarked ghost line: {line}")


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_erasure_random_programs(seed):
    prog = random_program(seed, n_stmts=12, allow_fork=True, allow_loop=True)
    ip = instrument(prog)
    assert print_program(strip(ip)) == print_program(prog)
    assert print_program(parse_program(print_instrumented(ip))) == print_program(prog)
