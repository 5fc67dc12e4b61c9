"""Random program builder shared by several test modules.

Builds syntactically valid, SSA-respecting programs from a seeded
random.Random so that property tests are reproducible.  The builder tracks
which variables definitely hold addresses, so generated dereferences do not
crash; generated programs are "dataflow programs": allocations, copies,
loads, stores, io calls, branches, and (optionally) forks and core calls.
"""

from __future__ import annotations

import random

from corefence.lang import (
    Assign,
    Binary,
    Branch,
    CoreAlloc,
    CoreCall,
    Fork,
    HeapAlloc,
    HeapRead,
    HeapWrite,
    InputDecl,
    IoCall,
    Lit,
    Loop,
    Program,
    Skip,
    Stmt,
    Var,
)


class ProgramBuilder:
    def __init__(self, rng: random.Random, *, secret_inputs: int = 1, plain_inputs: int = 1):
        self.rng = rng
        self.counter = 0
        self.inputs = []
        for i in range(secret_inputs):
            self.inputs.append(InputDecl(f"sec{i}", secret=True))
        for i in range(plain_inputs):
            self.inputs.append(InputDecl(f"inp{i}", secret=False))

    def fresh(self, prefix: str = "v") -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def scalar_expr(self, scalars: list[str]) -> object:
        rng = self.rng
        choice = rng.random()
        if scalars and choice < 0.55:
            return Var(rng.choice(scalars))
        if choice < 0.8:
            return Lit(rng.randrange(100))
        if scalars and choice < 0.9:
            return Binary("+", Var(rng.choice(scalars)), Lit(rng.randrange(10)))
        return Lit(rng.choice(["hello", "log", "x", ""]))

    def build(
        self,
        n_stmts: int,
        *,
        allow_fork: bool = False,
        allow_branch: bool = True,
        allow_loop: bool = False,
        sink_caps: tuple[str, ...] = ("fs_write", "net_write"),
    ) -> Program:
        scalars = [d.name for d in self.inputs]
        pointers: list[str] = []
        body = self._block(n_stmts, scalars, pointers, allow_fork, allow_branch, allow_loop, sink_caps, depth=0)
        return Program(inputs=list(self.inputs), core_apis={}, body=body)

    def _block(
        self,
        n: int,
        scalars: list[str],
        pointers: list[str],
        allow_fork: bool,
        allow_branch: bool,
        allow_loop: bool,
        sink_caps: tuple[str, ...],
        depth: int,
    ) -> list[Stmt]:
        rng = self.rng
        body: list[Stmt] = []
        scalars = list(scalars)
        pointers = list(pointers)
        for _ in range(n):
            kinds = ["alloc", "assign", "io"]
            if pointers:
                kinds += ["read", "write", "write"]
            if allow_branch and depth < 2:
                kinds.append("branch")
            if allow_loop and depth < 2:
                kinds.append("loop")
            if allow_fork and depth < 2:
                kinds.append("fork")
            kind = rng.choice(kinds)
            if kind == "alloc":
                x = self.fresh("p")
                body.append(HeapAlloc(x=x))
                pointers.append(x)
            elif kind == "assign":
                x = self.fresh("v")
                if pointers and rng.random() < 0.4:
                    body.append(Assign(x=x, value=Var(rng.choice(pointers))))
                    pointers.append(x)
                else:
                    body.append(Assign(x=x, value=self.scalar_expr(scalars)))
                    scalars.append(x)
            elif kind == "read":
                x = self.fresh("r")
                body.append(HeapRead(x=x, src=rng.choice(pointers)))
                # the loaded value may be anything; treat it as scalar-ish
                # unless we only ever store pointers into cells
                scalars.append(x)
            elif kind == "write":
                tgt = rng.choice(pointers)
                if pointers and rng.random() < 0.45:
                    body.append(HeapWrite(target=tgt, value=Var(rng.choice(pointers))))
                else:
                    body.append(HeapWrite(target=tgt, value=self.scalar_expr(scalars)))
            elif kind == "io":
                n_args = rng.randrange(0, 3)
                args = [self.scalar_expr(scalars) for _ in range(n_args)]
                caps = [rng.choice(sink_caps)] if rng.random() < 0.6 else []
                body.append(IoCall(op=rng.choice(["printf", "log", "send"]), args=args, caps=caps))
            elif kind == "branch":
                cond = (
                    Binary("<", self.scalar_expr(scalars), Lit(rng.randrange(50)))
                    if rng.random() < 0.7
                    else Lit(rng.random() < 0.5)
                )
                then = self._block(rng.randrange(1, 3), scalars, pointers, allow_fork, allow_branch, allow_loop, sink_caps, depth + 1)
                orelse = (
                    self._block(rng.randrange(0, 2), scalars, pointers, allow_fork, allow_branch, allow_loop, sink_caps, depth + 1)
                    if rng.random() < 0.5
                    else []
                )
                body.append(Branch(cond=cond, then=then, orelse=orelse))
            elif kind == "loop":
                # bounded by construction: condition is literally false
                inner = self._block(rng.randrange(1, 3), scalars, pointers, allow_fork, allow_branch, allow_loop, sink_caps, depth + 1)
                body.append(Loop(cond=Lit(False), body=inner))
            elif kind == "fork":
                captured = []
                if pointers and rng.random() < 0.8:
                    captured.append(rng.choice(pointers))
                if scalars and rng.random() < 0.5:
                    captured.append(rng.choice(scalars))
                captured = sorted(set(captured))
                inner = self._block(
                    rng.randrange(1, 4), [c for c in captured if c in scalars],
                    [c for c in captured if c in pointers],
                    False, allow_branch, allow_loop, sink_caps, depth + 1,
                )
                body.append(Fork(captured=captured, body=inner))
        if not body:
            body.append(Skip())
        return body


def random_program(seed: int, n_stmts: int = 12, **kwargs) -> Program:
    from corefence.lang import parse_program, print_program

    builder = ProgramBuilder(random.Random(seed))
    prog = builder.build(n_stmts, **kwargs)
    # round through the printer so labels are assigned exactly like any
    # other parsed program
    return parse_program(print_program(prog))
