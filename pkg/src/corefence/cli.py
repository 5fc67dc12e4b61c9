"""Pipeline driver: one binary, six subcommands, deterministic reports.

``check`` runs the whole pipeline over a program — parse/validate, the three
static analyses, taint, the static conditions, ghost instrumentation with
exhaustive schedule exploration, and (when a model and role are configured)
refinement of every explored schedule's boundary trace against the role's
I/O automaton.  The other subcommands expose the individual stages:
``analyze`` (static only), ``instrument`` (print the ghost-instrumented
program), ``explore`` (schedule exploration), ``msr`` (bounded symbolic
exploration of a model), ``refine`` (trace refinement only).

Exit codes follow the conditions module: 0 clean, 1 findings, 2 broken
input or configuration.  Output (text or JSON, ``--json``) is deterministic
byte for byte for identical inputs; JSON reports carry the schema version
in their header.  Every diagnostic names a statement label resolvable to a
source line.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .conditions import Diagnostic, check_conditions
from .escape import compute_escape
from .ghost import instrument, print_instrumented
from .interp import Contract, contract_from_dict, explore, run_once
from .iorefine import RefinementError, refine_events
from .lang import LangError, parse_program
from .msr import MsrError, explore_traces, parse_model, role_iospec
from .passthrough import compute_passthrough
from .points_to import compute_points_to
from .taint import TaintConfig, TaintConfigError, compute_taint

SCHEMA = "corefence.report/1"

PASSES = ("taint", "conditions", "explore", "refine")


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PipelineConfig:
    program: str
    taint_config: str | None = None
    contract: str | None = None
    model: str | None = None
    role: str | None = None
    passes: tuple[str, ...] = PASSES
    max_total_steps: int = 100_000
    max_steps_per_run: int = 2000
    max_refine_runs: int = 256
    fmt: str = "text"


def _require_file(path: str | None, what: str) -> None:
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"{what} {path!r} does not exist")


def validate_config(cfg: PipelineConfig) -> None:
    _require_file(cfg.program, "program")
    _require_file(cfg.taint_config, "taint config")
    _require_file(cfg.contract, "contract script")
    _require_file(cfg.model, "model")
    for p in cfg.passes:
        if p not in PASSES:
            raise ConfigError(f"unknown pass {p!r} (choose from {', '.join(PASSES)})")
    if cfg.max_total_steps <= 0 or cfg.max_steps_per_run <= 0 or cfg.max_refine_runs <= 0:
        raise ConfigError("exploration bounds must be positive")
    if (cfg.model is None) != (cfg.role is None):
        raise ConfigError("refinement needs both a model and a role")
    if "refine" in cfg.passes and cfg.model is not None and cfg.contract is None:
        raise ConfigError("refinement needs a contract script to produce events")


def _read(path: str, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {what} {path!r}: {e.strerror or e}") from e


def _load_taint_config(path: str | None) -> TaintConfig:
    if path is None:
        return TaintConfig()
    try:
        return TaintConfig.from_json(_read(path, "taint config"))
    except (TaintConfigError, json.JSONDecodeError, TypeError, KeyError) as e:
        raise ConfigError(f"bad taint config {path!r}: {e}") from e


def _load_contract(path: str) -> Contract:
    try:
        return contract_from_dict(json.loads(_read(path, "contract script")))
    except (ValueError, TypeError, KeyError, IndexError) as e:
        raise ConfigError(f"bad contract script {path!r}: {e}") from e


# --------------------------------------------------------------------------
# refinement across schedules


def refine_schedules(
    ip,
    contract: Contract,
    auto,
    inputs=None,
    max_runs: int = 256,
    max_steps_per_run: int = 2000,
):
    """Enumerate schedules by prefix replay and refine each run's trace.

    Same enumeration as the interpreter's explorer: replay a prefix, then
    always pick the lowest runnable thread, pushing unexplored siblings.
    Returns ``(verdicts, exhaustive)`` where each verdict entry is
    ``(schedule, RefinementVerdict)`` in discovery order.
    """
    stack: list[list[int]] = [[]]
    out = []
    exhaustive = True
    while stack:
        if len(out) >= max_runs:
            exhaustive = False
            break
        prefix = stack.pop()
        res = run_once(
            ip,
            schedule=prefix,
            inputs=inputs,
            contract=contract,
            max_steps=max_steps_per_run,
        )
        out.append((list(res.schedule), refine_events(res.events, auto)))
        for i in range(len(res.schedule) - 1, len(prefix) - 1, -1):
            chosen = res.schedule[i]
            for tid in res.runnable_sets[i]:
                if tid > chosen:
                    stack.append(res.schedule[:i] + [tid])
    return out, exhaustive


# --------------------------------------------------------------------------
# the check pipeline


def _taint_dict(rep) -> dict:
    return {
        "verdict": rep.verdict,
        "flows": [
            {"source": f.source, "sink": f.sink, "path": list(f.path)}
            for f in rep.flows
        ],
        "branch_violations": [
            {"label": label, "sources": list(srcs)}
            for label, srcs in rep.branch_violations
        ],
    }


def _explore_diags(erep) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    for kind, w in sorted(erep.failures.items()):
        if kind == "BUDGET":
            continue  # truncation is reported on the explore summary, not as a finding
        sched = ",".join(str(t) for t in w.schedule)
        diags.append(
            Diagnostic(
                rule=kind,
                label=w.outcome.label or "L?",
                message=f"{w.outcome.message} (schedule {sched or 'default'})",
            )
        )
    for r in erep.races:
        diags.append(
            Diagnostic(
                rule="RACE",
                label=r.second_label,
                message=f"{r.kinds} race on {r.site} with {r.first_label}",
            )
        )
    for f in erep.flows:
        diags.append(
            Diagnostic(
                rule="TAINT-RT",
                label=f.sink_label,
                message=f"runtime flow: {f.source} reached this sink",
            )
        )
    for v in erep.cross_violations:
        diags.append(
            Diagnostic(
                rule="CROSS",
                label=v.label,
                message=f"static/runtime disagreement ({v.kind}): {v.detail}",
            )
        )
    return diags


def cmd_check(cfg: PipelineConfig) -> tuple[int, dict]:
    """Run the pipeline; returns (exit code, report)."""
    validate_config(cfg)
    prog = parse_program(_read(cfg.program, "program"))
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    pmap = compute_passthrough(prog, sol)
    tcfg = _load_taint_config(cfg.taint_config)
    contract = _load_contract(cfg.contract) if cfg.contract else None

    diags: list[Diagnostic] = []
    report: dict = {
        "schema": SCHEMA,
        "command": "check",
        "program": cfg.program,
        "passes": list(cfg.passes),
        "taint": None,
        "conditions": None,
        "explore": None,
        "refinement": None,
    }

    if "taint" in cfg.passes:
        trep = compute_taint(prog, tcfg, sol)
        report["taint"] = _taint_dict(trep)
        for f in trep.flows:
            path = " -> ".join(f.path) if f.path else f.sink
            diags.append(
                Diagnostic(
                    rule="TAINT",
                    label=f.sink,
                    message=f"{f.source} reaches this sink (path {path})",
                )
            )
        for label, srcs in trep.branch_violations:
            diags.append(
                Diagnostic(
                    rule="TAINT-BRANCH",
                    label=label,
                    message=f"branch depends on {', '.join(srcs)}",
                )
            )

    if "conditions" in cfg.passes:
        cdiags = check_conditions(prog, sol, esc, pmap)
        report["conditions"] = {"findings": len(cdiags)}
        diags.extend(cdiags)

    erep = None
    if "explore" in cfg.passes:
        ip = instrument(prog)
        erep = explore(
            ip,
            contract=contract,
            taint_config=tcfg if "taint" in cfg.passes else None,
            static=(sol, esc, pmap),
            max_total_steps=cfg.max_total_steps,
            max_steps_per_run=cfg.max_steps_per_run,
        )
        report["explore"] = erep.to_dict()
        diags.extend(_explore_diags(erep))

    if "refine" in cfg.passes and cfg.model is not None:
        model = parse_model(_read(cfg.model, "model"))
        auto = role_iospec(model, cfg.role)
        ip = instrument(prog)
        verdicts, exhaustive = refine_schedules(
            ip,
            contract,
            auto,
            max_runs=cfg.max_refine_runs,
            max_steps_per_run=cfg.max_steps_per_run,
        )
        bad = [(s, v) for s, v in verdicts if not v.ok]
        report["refinement"] = {
            "role": cfg.role,
            "schedules": len(verdicts),
            "exhaustive": exhaustive,
            "ok": not bad,
            "first_rejection": (
                {"schedule": bad[0][0], "verdict": bad[0][1].to_dict()} if bad else None
            ),
        }
        if bad:
            sched, verdict = bad[0]
            for rv in verdict.rids:
                if rv.ok:
                    continue
                idx = rv.mismatch_index
                label = _event_label(ip, contract, sched, rv.rid, idx, cfg)
                expected = ", ".join(
                    sorted({e["rule"] for e in rv.expected})
                ) or "nothing (run complete)"
                diags.append(
                    Diagnostic(
                        rule="REFINE",
                        label=label,
                        message=(
                            f"instance {rv.rid} event {idx} not permitted by "
                            f"role {cfg.role!r}; enabled: {expected}"
                        ),
                    )
                )

    report["diagnostics"] = [d.to_dict() for d in diags]
    findings = sum(1 for d in diags if d.severity == "error")
    report["verdict"] = "clean" if findings == 0 else f"{findings} findings"
    return (0 if findings == 0 else 1), report


def _event_label(ip, contract, schedule, rid, idx, cfg: PipelineConfig) -> str:
    """Label of the event a refinement verdict points at (re-runs the schedule)."""
    res = run_once(
        ip, schedule=schedule, contract=contract, max_steps=cfg.max_steps_per_run
    )
    evs = [e for e in res.events if e.rid == rid]
    return evs[idx].label if idx is not None and idx < len(evs) else "L?"


# --------------------------------------------------------------------------
# other subcommands


def cmd_analyze(cfg: PipelineConfig) -> tuple[int, dict]:
    validate_config(cfg)
    prog = parse_program(_read(cfg.program, "program"))
    sol = compute_points_to(prog)
    esc = compute_escape(prog, sol)
    pmap = compute_passthrough(prog, sol)
    diags = check_conditions(prog, sol, esc, pmap)
    report = {
        "schema": SCHEMA,
        "command": "analyze",
        "program": cfg.program,
        "diagnostics": [d.to_dict() for d in diags],
        "verdict": "clean" if not diags else f"{len(diags)} findings",
    }
    return (0 if not diags else 1), report


def cmd_instrument(cfg: PipelineConfig) -> tuple[int, dict]:
    validate_config(cfg)
    prog = parse_program(_read(cfg.program, "program"))
    text = print_instrumented(instrument(prog))
    report = {
        "schema": SCHEMA,
        "command": "instrument",
        "program": cfg.program,
        "instrumented": text,
    }
    return 0, report


def cmd_explore(cfg: PipelineConfig) -> tuple[int, dict]:
    validate_config(cfg)
    prog = parse_program(_read(cfg.program, "program"))
    contract = _load_contract(cfg.contract) if cfg.contract else None
    tcfg = _load_taint_config(cfg.taint_config)
    erep = explore(
        instrument(prog),
        contract=contract,
        taint_config=tcfg,
        max_total_steps=cfg.max_total_steps,
        max_steps_per_run=cfg.max_steps_per_run,
    )
    diags = _explore_diags(erep)
    report = {
        "schema": SCHEMA,
        "command": "explore",
        "program": cfg.program,
        "report": erep.to_dict(),
        "diagnostics": [d.to_dict() for d in diags],
        "verdict": "clean" if not diags else f"{len(diags)} findings",
    }
    return (0 if not diags else 1), report


def cmd_msr(model_path: str, queries: tuple[str, ...], depth: int, max_states: int) -> tuple[int, dict]:
    """Bounded exploration of a model; returns (exit code, report)."""
    _require_file(model_path, "model")
    if depth < 0:
        raise ConfigError("depth bound must not be negative")
    if depth == 0:
        # nothing can fire in zero steps
        rep_dict = {
            "verdict": "no attack within bound",
            "attack": None,
            "states": 1,
            "transitions": 0,
            "depth_bound": 0,
            "bound_hit": True,
            "exhausted": False,
            "queries": list(queries),
        }
    else:
        model = parse_model(_read(model_path, "model"))
        rep_dict = explore_traces(model, depth, queries=queries, max_states=max_states).to_dict()
    report = {
        "schema": SCHEMA,
        "command": "msr",
        "model": model_path,
        **rep_dict,
    }
    return (1 if rep_dict["attack"] else 0), report


def cmd_refine(cfg: PipelineConfig) -> tuple[int, dict]:
    validate_config(cfg)
    if cfg.model is None:
        raise ConfigError("refine needs --model and --role")
    prog = parse_program(_read(cfg.program, "program"))
    contract = _load_contract(cfg.contract) if cfg.contract else None
    if contract is None:
        raise ConfigError("refinement needs a contract script to produce events")
    model = parse_model(_read(cfg.model, "model"))
    auto = role_iospec(model, cfg.role)
    verdicts, exhaustive = refine_schedules(
        instrument(prog),
        contract,
        auto,
        max_runs=cfg.max_refine_runs,
        max_steps_per_run=cfg.max_steps_per_run,
    )
    bad = [(s, v) for s, v in verdicts if not v.ok]
    report = {
        "schema": SCHEMA,
        "command": "refine",
        "program": cfg.program,
        "model": cfg.model,
        "role": cfg.role,
        "schedules": len(verdicts),
        "exhaustive": exhaustive,
        "ok": not bad,
        "verdicts": [
            {"schedule": s, **v.to_dict()} for s, v in (bad if bad else verdicts[:1])
        ],
    }
    return (0 if not bad else 1), report


# --------------------------------------------------------------------------
# rendering


def _render_diag_lines(diags: list[dict], out: list[str]) -> None:
    if not diags:
        out.append("diagnostics: none")
        return
    out.append("diagnostics:")
    for d in diags:
        out.append(f"  {d['rule']} {d['label']} {d['severity']}: {d['message']}")


def render_text(report: dict) -> str:
    cmd = report["command"]
    out = [f"{report['schema']} {cmd}"]
    if cmd == "instrument":
        out.append(report["instrumented"].rstrip("\n"))
        return "\n".join(out) + "\n"
    for key in ("program", "model", "role"):
        if report.get(key) is not None:
            out.append(f"{key}: {report[key]}")

    if cmd == "check":
        out.append("passes: " + " ".join(report["passes"]))
        t = report["taint"]
        if t is not None:
            out.append(
                f"taint: {t['verdict']} ({len(t['flows'])} flows, "
                f"{len(t['branch_violations'])} branch violations)"
            )
        c = report["conditions"]
        if c is not None:
            out.append(f"conditions: {c['findings']} findings")
        e = report["explore"]
        if e is not None:
            out.append(
                f"explore: runs={e['runs']} ok_runs={e['ok_runs']} "
                f"steps={e['total_steps']} "
                f"exhaustive={'yes' if e['exhaustive'] else 'no'}"
            )
        r = report["refinement"]
        if r is not None:
            out.append(
                f"refine: role={r['role']} schedules={r['schedules']} "
                f"ok={'yes' if r['ok'] else 'no'}"
            )
        _render_diag_lines(report["diagnostics"], out)
        out.append(f"verdict: {report['verdict']}")
    elif cmd == "analyze":
        _render_diag_lines(report["diagnostics"], out)
        out.append(f"verdict: {report['verdict']}")
    elif cmd == "explore":
        e = report["report"]
        out.append(
            f"runs: {e['runs']} ok_runs: {e['ok_runs']} steps: {e['total_steps']} "
            f"exhaustive: {'yes' if e['exhaustive'] else 'no'}"
        )
        _render_diag_lines(report["diagnostics"], out)
        out.append(f"verdict: {report['verdict']}")
    elif cmd == "msr":
        out.append("queries: " + " ".join(report["queries"]))
        out.append(f"depth: {report['depth_bound']}")
        out.append(f"states: {report['states']} transitions: {report['transitions']}")
        out.append(f"verdict: {report['verdict']}")
        a = report["attack"]
        if a is not None:
            out.append(
                f"attack: {a['query']} depth={a['depth']} steps={a['length']}"
            )
            out.append(f"  {a['description']}")
            for i, s in enumerate(a["steps"], 1):
                b = ", ".join(f"{v} -> {t}" for v, t in s["binding"].items())
                out.append(f"  {i}. {s['rule']}" + (f" {{{b}}}" if b else ""))
    elif cmd == "refine":
        out.append(
            f"schedules: {report['schedules']} "
            f"exhaustive: {'yes' if report['exhaustive'] else 'no'}"
        )
        out.append(f"verdict: {'ok' if report['ok'] else 'rejected'}")
        for v in report["verdicts"]:
            sched = ",".join(str(t) for t in v["schedule"]) or "default"
            for rv in v["rids"]:
                if rv["ok"]:
                    out.append(f"  schedule {sched} rid {rv['rid']}: ok")
                else:
                    expected = ", ".join(sorted({e["rule"] for e in rv["expected"]}))
                    out.append(
                        f"  schedule {sched} rid {rv['rid']}: rejected at event "
                        f"{rv['mismatch_index']}"
                        + (f" (enabled: {expected})" if expected else "")
                    )
    return "\n".join(out) + "\n"


def emit(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2) + "\n"
    return render_text(report)


# --------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser, *, bounds: bool = True) -> None:
    p.add_argument("--json", action="store_true", help="emit a JSON report")
    if bounds:
        p.add_argument("--max-total-steps", type=int, default=100_000)
        p.add_argument("--max-steps-per-run", type=int, default=2000)
        p.add_argument("--max-refine-runs", type=int, default=256)


def _cfg_from(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        program=args.program,
        taint_config=getattr(args, "taint_config", None),
        contract=getattr(args, "contract", None),
        model=getattr(args, "model", None),
        role=getattr(args, "role", None),
        passes=tuple(args.passes.split(",")) if getattr(args, "passes", None) else PASSES,
        max_total_steps=getattr(args, "max_total_steps", 100_000),
        max_steps_per_run=getattr(args, "max_steps_per_run", 2000),
        max_refine_runs=getattr(args, "max_refine_runs", 256),
        fmt="json" if args.json else "text",
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="corefence",
        description="static conditions, schedule exploration, symbolic protocol "
        "search, and I/O-trace refinement for core-structured programs",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    pc = sub.add_parser("check", help="full pipeline over one program")
    pc.add_argument("program")
    pc.add_argument("--taint-config")
    pc.add_argument("--contract")
    pc.add_argument("--model")
    pc.add_argument("--role")
    pc.add_argument("--passes", help=f"comma list from: {','.join(PASSES)}")
    _add_common(pc)
    pc.set_defaults(run=lambda a: cmd_check(_cfg_from(a)))

    pa = sub.add_parser("analyze", help="static analyses and conditions only")
    pa.add_argument("program")
    _add_common(pa, bounds=False)
    pa.set_defaults(run=lambda a: cmd_analyze(_cfg_from(a)))

    pi = sub.add_parser("instrument", help="print the ghost-instrumented program")
    pi.add_argument("program")
    _add_common(pi, bounds=False)
    pi.set_defaults(run=lambda a: cmd_instrument(_cfg_from(a)))

    pe = sub.add_parser("explore", help="exhaustive schedule exploration")
    pe.add_argument("program")
    pe.add_argument("--contract")
    pe.add_argument("--taint-config")
    _add_common(pe)
    pe.set_defaults(run=lambda a: cmd_explore(_cfg_from(a)))

    pm = sub.add_parser("msr", help="bounded symbolic exploration of a model")
    pm.add_argument("model")
    pm.add_argument("--query", choices=["secrecy", "agreement", "all"], default="all")
    pm.add_argument("--depth", type=int, default=10)
    pm.add_argument("--max-states", type=int, default=150_000)
    pm.add_argument("--json", action="store_true")
    pm.set_defaults(
        run=lambda a: cmd_msr(
            a.model,
            ("secrecy", "agreement") if a.query == "all" else (a.query,),
            a.depth,
            a.max_states,
        )
    )

    pr = sub.add_parser("refine", help="refine boundary traces against a role")
    pr.add_argument("program")
    pr.add_argument("--contract", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--role", required=True)
    _add_common(pr)
    pr.set_defaults(run=lambda a: cmd_refine(_cfg_from(a)))

    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    fmt = "json" if getattr(args, "json", False) else "text"
    try:
        code, report = args.run(args)
    except (ConfigError, LangError, MsrError, TaintConfigError, RefinementError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(emit(report, fmt))
    return code


if __name__ == "__main__":
    sys.exit(main())
