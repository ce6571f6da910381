"""Command-line front end.

Exit codes: 0 when the verdict is Verified, Pass or Certified; 1 on a failed or
inconclusive verification (and on syntax, type or runtime errors in inputs);
2 on usage errors (bad arguments, missing files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import load_config
from .errors import CqError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        x = x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def emit(args, payload: dict, human) -> None:
    if args.json:
        print(json.dumps(_clean(payload), indent=2, sort_keys=True))
    else:
        human()


def table(rows: list, headers: list) -> str:
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _read_file(path: str) -> str:
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _config(args):
    try:
        return load_config(args.config)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load config: {exc}") from None


def _env_args(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"--env expects NAME=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = int(v)
        except ValueError:
            raise UsageError(f"--env value for {k} must be an integer") from None
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    from .lang.parser import parse
    from .lang.printer import pretty_module
    from .lang.typecheck import check_program
    mod = parse(_read_file(args.file))
    for name, body in mod.progs.items():
        check_program(body, mod.decls)
    progs = {n: mod.program(n) for n in mod.progs}
    payload = {"status": "Pass", "programs": [{"name": n, "cvars": p.cvars, "qvars": p.qvars, "qdim": p.qdim}
                                              for n, p in progs.items()]}
    emit(args, payload, lambda: print(pretty_module(mod)))
    return EXIT_OK


def cmd_run(args) -> int:
    from .cqstate import CqState, Env, matrix_from_json
    from .lang.parser import parse
    from .semantics import SemOpts, denote
    cfg = _config(args)
    mod = parse(_read_file(args.file))
    names = list(mod.progs)
    name = args.prog or (names[0] if len(names) == 1 else None)
    if name not in mod.progs:
        raise UsageError(f"choose a program with --prog (available: {', '.join(names)})")
    prog = mod.program(name)
    env = {v: max(0, prog.decls.domain(v)[0]) if prog.decls.domain(v)[0] <= 0 <= prog.decls.domain(v)[1]
           else prog.decls.domain(v)[0] for v in prog.cvars}
    env.update(_env_args(args.env))
    d = prog.qdim
    if args.state:
        rho = matrix_from_json(json.loads(_read_file(args.state)))
    else:
        rho = np.zeros((d, d), dtype=complex)
        if not 0 <= args.ket < d:
            raise UsageError(f"--ket must be in [0, {d - 1}]")
        rho[args.ket, args.ket] = 1
    opts = SemOpts(loop_max_iters=args.max_iters or cfg.loop_max_iters,
                   loop_residual_tol=args.residual_tol or args.tol or cfg.loop_residual_tol,
                   prune_tol=cfg.prune_tol, on_overflow="abort" if args.abort_on_overflow else "raise")
    rep = denote(prog, CqState.simple(Env(env), rho), opts)
    ok = rep.residual_trace <= opts.loop_residual_tol * max(1, len(rep.loop_residuals))
    payload = dict(rep.to_json(), status="Pass" if ok else "Inconclusive", program=name)

    def human():
        rows = [(dict(e), float(np.trace(r).real), np.round(np.real(np.diag(r)), 6).tolist())
                for e, r in sorted(rep.output.items(), key=lambda kv: sorted(kv[0].items()))]
        print(table(rows, ["env", "trace", "diag(rho)"]))
        print(f"residual trace {rep.residual_trace:.3g}; status {payload['status']}")
    emit(args, payload, human)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_wp(args) -> int:
    from .assertions import AssertionReader
    from .lang.parser import parse
    from .wp import WpOpts, wp
    cfg = _config(args)
    mod = parse(_read_file(args.prog))
    names = list(mod.progs)
    name = args.name or (names[0] if len(names) == 1 else None)
    if name not in mod.progs:
        raise UsageError(f"choose a program with --name (available: {', '.join(names)})")
    prog = mod.program(name)
    reader = AssertionReader(prog.decls)
    if os.path.exists(args.post):
        defs = reader.read_file(_read_file(args.post))
        key = args.post_name or ("main" if "main" in defs else list(defs)[-1])
        post = defs[key]
    else:
        post = reader.read(args.post)
    regs = set(prog.qvars) | set(post.regs())
    space = prog.decls.space(regs)
    opts = WpOpts(max_iters=args.max_iters or cfg.wp_max_iters, tol=args.tol or cfg.wp_tol,
                  cap=args.cap or cfg.enum_cap)
    rep = wp(prog.body, post, space, prog.decls, opts)
    payload = dict(rep.to_json(), status="Pass" if rep.converged else "Inconclusive", program=name)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(_clean(payload), fh, indent=2, sort_keys=True)

    def human():
        rows = []
        for k, v in sorted(rep.result.entries.items()):
            rows.append((dict(zip(rep.result.vars_, k)), "bounded" if v.is_bounded else "unbounded",
                         float(np.trace(v.finite).real), v.norm() if v.is_bounded else float("inf")))
        print(table(rows, ["env", "kind", "trace(finite)", "norm"]))
        print(f"loops converged: {rep.converged}")
    emit(args, payload, human)
    return EXIT_OK if rep.converged else EXIT_FAIL


def _instance(args):
    from .transport import TransportInstance
    try:
        data = json.loads(_read_file(args.instance))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.instance} is not valid JSON: {exc}") from None
    missing = [k for k in ("delta1", "delta2", "phi") if k not in data]
    if missing:
        raise UsageError(f"instance lacks {', '.join(missing)}")
    decls = space = None
    if args.decls:
        from .lang.parser import parse
        decls = parse(_read_file(args.decls)).decls
        regs = data.get("registers")
        if regs is None:
            raise UsageError("an assertion-valued instance needs a \"registers\" list")
        space = decls.space(regs)
    return TransportInstance.from_json(data, decls, space)


def cmd_transport(args) -> int:
    from .errors import MassMismatch
    from .transport import DualCandidate, dual_check, primal_solve, solve_ivp
    cfg = _config(args)
    inst = _instance(args)
    tol = args.tol or cfg.solver_tol
    iters = args.max_iters or cfg.solver_max_iters
    cap = args.cap or cfg.transport_cap
    try:
        if args.action == "dual-check":
            if not args.dual:
                raise UsageError("dual-check needs --dual candidate.json")
            cand = DualCandidate.from_json(json.loads(_read_file(args.dual)))
            ok, value = dual_check(inst, cand, tol=args.tol or 1e-8, cap=cap)
            payload = {"status": "Pass" if ok else "Fail", "feasible": ok, "dualValue": value}
            emit(args, payload, lambda: print(f"dual candidate feasible: {ok}; value {value:.8g}"))
            return EXIT_OK if ok else EXIT_FAIL
        solver = solve_ivp if args.exact_support or inst.trunc is None else primal_solve
        res = solver(inst, tol=tol, max_iters=iters, cap=cap)
    except MassMismatch as exc:
        payload = {"status": "MassMismatch", "error": str(exc)}
        emit(args, payload, lambda: print(f"MassMismatch: {exc}"))
        return EXIT_FAIL
    if args.action == "gap":
        payload = {"status": res.status, "primalValue": res.primal_value, "dualValue": res.dual_value,
                   "gap": res.gap, "method": res.method}
    else:
        payload = dict(res.to_json())
    emit(args, payload, lambda: print(table([(res.primal_value, res.dual_value, res.gap, res.status, res.method)],
                                            ["primal", "dual", "gap", "status", "method"])))
    return EXIT_OK if res.certified else EXIT_FAIL


def _check_opts(args):
    from .prover.judgment import CheckOpts
    cfg = _config(args)
    kw = {"assume_ast": bool(args.assume_ast) or None, "cap": args.cap}
    if args.tol:
        kw.update(entail_tol=args.tol, coupling_tol=args.tol, oracle_tol=args.tol)
    if args.max_iters:
        kw["solver_max_iters"] = args.max_iters
    return CheckOpts.from_config(cfg, **kw)


def _load_proof(args, opts):
    from .prover.check import build_context
    from .prover.oracle import load_probes
    from .prover.script import load_script
    if not os.path.exists(args.proof):
        raise UsageError(f"no such file: {args.proof}")
    script = load_script(args.proof)
    ctx, goal = build_context(script, opts)
    if args.probes:
        if not os.path.exists(args.probes):
            raise UsageError(f"no such file: {args.probes}")
        ctx.probes = load_probes(args.probes, ctx)
    return script, ctx, goal


def cmd_check(args) -> int:
    from .prover.check import VERIFIED, check_goal
    opts = _check_opts(args)
    script, ctx, goal = _load_proof(args, opts)
    rep = check_goal(goal, script.steps, ctx)
    payload = rep.to_json()

    def human():
        rows = [(s.path, s.rule, s.status, sum(1 for c in s.sides if c.ok), len(s.sides), s.error)
                for s in rep.steps]
        print(table(rows, ["step", "rule", "status", "sides ok", "sides", "note"]))
        for a in rep.assumptions:
            print(f"assumption: {a}")
        print(f"verdict: {rep.verdict}")
    emit(args, payload, human)
    return EXIT_OK if rep.verdict == VERIFIED else EXIT_FAIL


def cmd_oracle(args) -> int:
    from .prover.oracle import random_probes, validity_oracle
    opts = _check_opts(args)
    script, ctx, goal = _load_proof(args, opts)
    probes = list(ctx.probes) + random_probes(goal, ctx, args.random)
    rep = validity_oracle(goal, probes, ctx)
    payload = rep.to_json()

    def human():
        rows = [(dict(r.env1), dict(r.env2), r.pre, r.min_post, r.residual, r.status) for r in rep.rows]
        print(table(rows, ["env1", "env2", "pre", "min post", "residual", "status"]))
        print(f"oracle: {rep.status}")
    emit(args, payload, human)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_examples(args) -> int:
    from .examples import EXAMPLES, run_example
    if not args.name:
        payload = {"examples": [{"name": e.name, "description": e.description, "scripts": list(e.scripts)}
                                for e in EXAMPLES.values()]}
        emit(args, payload, lambda: print(table([(e.name, ", ".join(e.scripts), e.description)
                                                 for e in EXAMPLES.values()], ["name", "scripts", "description"])))
        return EXIT_OK
    names = list(EXAMPLES) if args.name == "all" else [args.name]
    for n in names:
        if n not in EXAMPLES:
            raise UsageError(f"unknown example {n!r} (available: {', '.join(EXAMPLES)}, all)")
    reports = [run_example(n, _check_opts(args)) for n in names]
    payload = {"examples": [r.to_json() for r in reports]} if len(reports) > 1 else reports[0].to_json()

    def human():
        for r in reports:
            print(f"== {r.name}: {r.verdict} ({r.seconds:.2f} s)")
            rows = [(s, c.verdict, r.oracles[s].status, "; ".join(c.assumptions)) for s, c in r.checks.items()]
            print(table(rows, ["script", "verdict", "oracle", "assumptions"]))
            _print_facts(r.name, r.facts)
    emit(args, payload, human)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def _print_facts(name: str, f: dict):
    if name == "walk":
        print(f"output laws from x = {f['start']} (loop budget {f['budget']}): TV distance {f['tv']:.3g}")
    elif name == "bernoulli":
        for k in ("law1", "law2"):
            print(f"{k}: P(x=0) = {f[k].get(0, 0.0):.12g}, P(x=1) = {f[k].get(1, 0.0):.12g}")
        print("laws equal" if f["ok"] else "laws differ")
    elif name == "deferred":
        print(table([(r["U"], r["input"], r["law1"], r["maxDiff"]) for r in f["rows"]],
                    ["U", "input", "law of (x, y)", "max diff"]))
    elif name == "rejection":
        rows = [(r["budget"], r["residual"], r["expected"], r["quantumError"]) for r in f["rows"][::8] + f["rows"][-1:]]
        print(table(rows, ["iterations", "residual", "2^-n", "trace dist to |1><1|"]))
    elif name == "qubit_flip":
        print(table([(r["input"], r["q1"], r["q2"], r["maxDiff"]) for r in f["rows"]],
                    ["input", "law of q1", "law of q2", "max diff"]))


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON output")
    common.add_argument("--tol", type=float, help="main numeric tolerance of the command")
    common.add_argument("--max-iters", type=int, help="iteration budget (loops, wp or solver)")
    common.add_argument("--cap", type=int, help="enumeration or dimension cap")
    common.add_argument("--assume-ast", action="store_true", help="accept unproved termination as an assumption")
    common.add_argument("--config", help="JSON config file (default: $CQVERIFY_CONFIG)")

    p = argparse.ArgumentParser(prog="cqverify", description="Verification tools for classical-quantum programs.")
    p.add_argument("--version", action="version", version=f"cqverify {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("parse", parents=[common], help="parse and type-check a program file")
    s.add_argument("file")
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("run", parents=[common], help="run a program on a simple state")
    s.add_argument("file")
    s.add_argument("--prog", help="program name")
    s.add_argument("--env", action="append", metavar="NAME=VALUE", help="initial classical value")
    s.add_argument("--ket", type=int, default=0, help="computational basis index of the initial state")
    s.add_argument("--state", help="JSON density matrix for the initial state")
    s.add_argument("--residual-tol", type=float, help="loop residual tolerance")
    s.add_argument("--abort-on-overflow", action="store_true", help="drop out-of-domain mass instead of failing")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("wp", parents=[common], help="weakest precondition of a program")
    s.add_argument("--prog", required=True, help="program file")
    s.add_argument("--name", help="program name")
    s.add_argument("--post", required=True, help="assertion file or inline assertion")
    s.add_argument("--post-name", help="definition to use from the assertion file")
    s.add_argument("--out", help="write the JSON result here")
    s.set_defaults(fn=cmd_wp)

    s = sub.add_parser("transport", parents=[common], help="optimal transport between cq-states")
    s.add_argument("action", choices=["solve", "dual-check", "gap"])
    s.add_argument("instance")
    s.add_argument("--dual", help="dual candidate JSON (dual-check)")
    s.add_argument("--decls", help="program file declaring names used by an assertion-valued phi")
    s.add_argument("--exact-support", action="store_true", help="restrict couplings to the finite part of phi")
    s.set_defaults(fn=cmd_transport)

    for name, fn, helptext in (("check", cmd_check, "check a proof script"),
                               ("oracle", cmd_oracle, "semantic validity check of a script's goal")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--proof", required=True)
        s.add_argument("--probes", help="probe set JSON")
        if name == "oracle":
            s.add_argument("--random", type=int, default=10, help="number of random probes")
        s.set_defaults(fn=fn)

    s = sub.add_parser("examples", parents=[common], help="list or run the built-in examples")
    s.add_argument("name", nargs="?")
    s.set_defaults(fn=cmd_examples)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CqError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
