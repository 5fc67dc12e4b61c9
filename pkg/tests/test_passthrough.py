"""Pass-through classification: instances and returned cells keep their
status exactly until a reference to them is stored into some cell."""

from corefence.lang import parse_program
from corefence.passthrough import compute_passthrough
from corefence.points_to import compute_points_to


def _maps(src):
    prog = parse_program(src)
    sol = compute_points_to(prog)
    return sol, compute_passthrough(prog, sol)


def test_unstored_instance_is_passthrough():
    _, pm = _maps(
        """
core_api 0 "send"
c := core_alloc()
r := core_call 0 on c ()
"""
    )
    assert pm.is_pt_core("L0")
    assert pm.app_managed("L0") is False
    assert pm.app_managed("L1#r0") is True


def test_stored_instance_loses_passthrough():
    _, pm = _maps(
        """
core_api 0 "send"
c := core_alloc()
p := new()
*p := c
"""
    )
    assert pm.is_pt_core("L0") is False


def test_stored_alias_also_disqualifies():
    # storing an alias is storing the instance
    _, pm = _maps(
        """
core_api 0 "send"
c := core_alloc()
a := c
p := new()
*p := a
"""
    )
    assert pm.is_pt_core("L0") is False


def test_app_cells_always_app_managed():
    sol, pm = _maps("x := new()\ny := new()\n*x := y\n")
    assert pm.app_managed("L0")
    assert pm.app_managed("L1")


def test_returned_cell_stored_loses_ret_passthrough():
    _, pm = _maps(
        """
core_api 0 "send"
c := core_alloc()
r := core_call 0 on c ()
p := new()
*p := r
"""
    )
    assert pm.pt_ret.get("L1#r0", True) is False
    # still app-managed: ownership was transferred out of the core
    assert pm.app_managed("L1#r0") is True


def test_branch_store_counts():
    _, pm = _maps(
        """
input b secret
core_api 0 "send"
c := core_alloc()
p := new()
if b == 1 {
  *p := c
}
"""
    )
    assert pm.is_pt_core("L0") is False
