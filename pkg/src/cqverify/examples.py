"""Built-in example corpus: program files, proof scripts, probe sets and semantic facts."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .cqstate import CqState, Env
from .lang.parser import parse_file
from .opalg import trace_norm
from .prover.check import ASSUMED, VERIFIED, build_context, check_proof
from .prover.judgment import CheckOpts
from .prover.oracle import random_probes, validity_oracle
from .prover.script import load_script
from .semantics import SemOpts, denote

CORPUS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "corpus")


def corpus_path(name: str) -> str:
    return os.path.join(CORPUS_DIR, name)


def law(delta: CqState, var: str) -> dict:
    """Distribution of one classical variable in a cq-state."""
    out: dict = {}
    for env, p in delta.classical_dist().items():
        out[env[var]] = out.get(env[var], 0.0) + p
    return out


def law_distance(a: dict, b: dict) -> float:
    """Total-variation distance of two distributions given as dicts."""
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def _basis(d: int, i: int) -> np.ndarray:
    rho = np.zeros((d, d), dtype=complex)
    rho[i, i] = 1
    return rho


# ---------------------------------------------------------------------------
# semantic facts per example


def walk_facts(start: int = 2, budget: int | None = 40, opts: SemOpts | None = None) -> dict:
    """Output laws of both walks from x = start; budget bounds the loop iterations (None: the limit)."""
    if opts is None:
        opts = SemOpts(on_overflow="abort") if budget is None else \
            SemOpts(loop_max_iters=budget, loop_residual_tol=1e-300, on_overflow="abort")
    m = parse_file(corpus_path("walk.cq"))
    r1 = denote(m.program("walk"), CqState.simple(Env(x1=start, b1=0), np.eye(1)), opts)
    p2 = m.program("walk_meas")
    r2 = denote(p2, CqState.simple(Env(x2=start, b2=0), _basis(p2.qdim, 0)), opts)
    l1, l2 = law(r1.output, "x1"), law(r2.output, "x2")
    ovf1 = sum(e["mass"] for e in r1.domain_errors)
    ovf2 = sum(e["mass"] for e in r2.domain_errors)
    tv = law_distance(l1, l2) + 0.5 * abs(ovf1 - ovf2) + 0.5 * abs(r1.residual_trace - r2.residual_trace)
    return {"start": start, "budget": budget, "law1": l1, "law2": l2, "overflow1": ovf1, "overflow2": ovf2,
            "residual": max(r1.residual_trace, r2.residual_trace), "tv": tv, "ok": tv <= 1e-9}


def deferred_facts(unitaries=("X", "H")) -> dict:
    m = parse_file(corpus_path("deferred.cq"))
    opts = SemOpts()
    rows, worst = [], 0.0
    for U in unitaries:
        c1, c2 = m.program(f"circuit1_{U}"), m.program(f"circuit2_{U}")
        for p in (0, 1):
            for q in (0, 1):
                i = 2 * p + q
                o1 = denote(c1, CqState.simple(Env(x1=0, y1=0), _basis(4, i)), opts).output
                o2 = denote(c2, CqState.simple(Env(x2=0, y2=0), _basis(4, i)), opts).output
                j1 = {(e["x1"], e["y1"]): w for e, w in o1.marginal_vars(["x1", "y1"]).classical_dist().items()}
                j2 = {(e["x2"], e["y2"]): w for e, w in o2.marginal_vars(["x2", "y2"]).classical_dist().items()}
                diff = max(abs(j1.get(k, 0.0) - j2.get(k, 0.0)) for k in set(j1) | set(j2))
                worst = max(worst, diff)
                rows.append({"U": U, "input": f"|{p}{q}>", "law1": {f"{a}{b}": w for (a, b), w in sorted(j1.items())},
                             "law2": {f"{a}{b}": w for (a, b), w in sorted(j2.items())}, "maxDiff": diff})
    return {"rows": rows, "maxDiff": worst, "ok": worst <= 1e-12}


def rejection_facts(budgets=tuple(range(1, 41))) -> dict:
    m = parse_file(corpus_path("rejection.cq"))
    prog = m.program("rejection")
    start = CqState.simple(Env(x1=0), _basis(2, 0))
    rows, ok = [], True
    for n in budgets:
        rep = denote(prog, start, SemOpts(loop_max_iters=n, loop_residual_tol=1e-300, prune_tol=1e-30,
                                          linearize=False))
        one = np.diag([0.0, 1.0]).astype(complex)
        qerr = trace_norm(rep.output.quantum_part() - one)
        res_err = abs(rep.residual_trace - 2.0 ** -n)
        ok &= res_err <= 1e-12 and qerr <= 2.0 ** -n + 1e-12
        rows.append({"budget": n, "residual": rep.residual_trace, "expected": 2.0 ** -n,
                     "quantumError": qerr})
    full = denote(prog, start, SemOpts())
    m2 = m.program("bitflip")
    flip = denote(m2, CqState.simple(Env(), _basis(2, 0)), SemOpts()).output.quantum_part()
    diff = float(np.max(np.abs(full.output.quantum_part() - flip)))
    return {"rows": rows, "limitVsFlip": diff, "ok": bool(ok and diff <= 1e-9)}


def qubit_flip_facts() -> dict:
    m = parse_file(corpus_path("qubit_flip.cq"))
    p1, p2 = m.program("flip_classical"), m.program("flip_quantum")
    rows, worst = [], 0.0
    for b in (0, 1):
        o1 = denote(p1, CqState.simple(Env(b1=0), _basis(2, b)), SemOpts()).output.quantum_part()
        o2 = denote(p2, CqState.simple(Env(b2=0), _basis(2, b)), SemOpts()).output.quantum_part()
        diff = float(np.max(np.abs(o1 - o2)))
        worst = max(worst, diff)
        rows.append({"input": f"|{b}>", "q1": np.real(np.diag(o1)).tolist(), "q2": np.real(np.diag(o2)).tolist(),
                     "maxDiff": diff})
    return {"rows": rows, "maxDiff": worst, "ok": worst <= 1e-9}


def bernoulli_facts() -> dict:
    m = parse_file(corpus_path("bernoulli.cq"))
    p1, p2 = m.program("bern1"), m.program("bern2")
    o1 = denote(p1, CqState.simple(Env(x1=0), np.eye(1)), SemOpts()).output
    o2 = denote(p2, CqState.simple(Env(x2=0, b2=0, b2p=0), _basis(4, 0)), SemOpts()).output
    l1, l2 = law(o1, "x1"), law(o2, "x2")
    ok = all(abs(l.get(1, 0.0) - 0.25) <= 1e-12 and abs(l.get(0, 0.0) - 0.75) <= 1e-12 for l in (l1, l2))
    return {"law1": l1, "law2": l2, "ok": ok}


@dataclass
class Example:
    name: str
    program: str
    scripts: tuple
    facts: object
    description: str = ""


EXAMPLES = {
    "walk": Example("walk", "walk.cq", ("walk.prf",), walk_facts,
                    "coin-driven and measurement-driven random walks"),
    "deferred": Example("deferred", "deferred.cq", ("deferred_X.prf", "deferred_H.prf"), deferred_facts,
                        "measure-then-control versus control-then-measure"),
    "rejection": Example("rejection", "rejection.cq", ("rejection.prf",), rejection_facts,
                         "repeat-until-one loop versus a direct bit flip"),
    "qubit_flip": Example("qubit_flip", "qubit_flip.cq", ("qubit_flip.prf",), qubit_flip_facts,
                          "classical random flip versus Hadamard and measurement"),
    "bernoulli": Example("bernoulli", "bernoulli.cq", ("bernoulli.prf", "bernoulli_oracle.prf"), bernoulli_facts,
                         "Bern(1/4) sample versus two measured coins"),
}


@dataclass
class ExampleReport:
    name: str
    checks: dict = field(default_factory=dict)   # script -> CheckReport
    oracles: dict = field(default_factory=dict)  # script -> OracleReport
    facts: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        good = all(r.verdict in (VERIFIED, ASSUMED) for r in self.checks.values())
        return good and all(o.passed for o in self.oracles.values()) and bool(self.facts.get("ok", False))

    @property
    def verdict(self) -> str:
        if not self.passed:
            return "Failed"
        if any(r.verdict == VERIFIED for r in self.checks.values()):
            return VERIFIED
        return ASSUMED

    def to_json(self) -> dict:
        return {"name": self.name, "verdict": self.verdict,
                "scripts": {k: {"verdict": r.verdict, "assumptions": r.assumptions,
                                "failures": r.to_json()["failures"]} for k, r in self.checks.items()},
                "oracle": {k: o.status for k, o in self.oracles.items()},
                "facts": _jsonable(self.facts), "seconds": round(self.seconds, 3)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def run_example(name: str, opts: CheckOpts | None = None, oracle_probes: int = 4) -> ExampleReport:
    """Check every proof script of an example, run the oracle on its probes and compute its facts."""
    ex = EXAMPLES[name]
    opts = opts or CheckOpts()
    t = time.time()
    rep = ExampleReport(name)
    for s in ex.scripts:
        script = load_script(corpus_path(s))
        rep.checks[s] = check_proof(script, opts)
        ctx, goal = build_context(script, opts)
        probes = list(ctx.probes) + random_probes(goal, ctx, oracle_probes)
        rep.oracles[s] = validity_oracle(goal, probes, ctx)
    rep.facts = ex.facts()
    rep.seconds = time.time() - t
    return rep
