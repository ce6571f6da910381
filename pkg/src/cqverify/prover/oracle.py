"""Semantic validity oracle: run both programs and minimise the post over output couplings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..cqstate import CqState, Env, matrix_from_json, vector_from_json
from ..errors import DimMismatch
from ..lang.ast import classical_vars
from ..opalg import dag, ivp_expect, partial_trace, subspace_basis
from ..semantics import denote
from ..transport import TransportInstance, solve_ivp
from .coupling import random_state_on
from .judgment import Judgment, Probe


@dataclass
class OracleRow:
    env1: Env
    env2: Env
    pre: float
    min_post: float
    residual: float
    status: str  # Pass, Fail, Inconclusive
    solver: str = ""
    coupling: object = None

    def to_json(self) -> dict:
        def num(x):
            return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")
        return {"env1": self.env1.to_json(), "env2": self.env2.to_json(), "pre": num(self.pre),
                "minPost": num(self.min_post), "residual": self.residual, "status": self.status,
                "solver": self.solver}


@dataclass
class OracleReport:
    rows: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if any(r.status == "Fail" for r in self.rows):
            return "Fail"
        if any(r.status == "Inconclusive" for r in self.rows):
            return "Inconclusive"
        return "Pass"

    @property
    def passed(self) -> bool:
        return self.status == "Pass"

    def to_json(self) -> dict:
        return {"status": self.status, "probes": [r.to_json() for r in self.rows]}


def validity_oracle(j: Judgment, probes: list, ctx, tol: float | None = None) -> OracleReport:
    """For each probe (sigma1, sigma2, rho): min over couplings of the outputs of E[post]
    compared with tr(pre(sigma) rho). Pass iff min <= pre + tol everywhere."""
    tol = ctx.opts.oracle_tol if tol is None else tol
    rep = OracleReport()
    split = ctx.split
    for pr in probes:
        pr = pr if isinstance(pr, Probe) else Probe(Env(pr[0]), Env(pr[1]), np.asarray(pr[2], dtype=complex))
        if pr.rho.shape != (ctx.joint.dim, ctx.joint.dim):
            raise DimMismatch(f"probe state {pr.rho.shape} vs joint space dim {ctx.joint.dim}")
        sigma = pr.env1.update(pr.env2)
        pre = ivp_expect(ctx.ev(j.pre, sigma), pr.rho, check=False)
        if np.isinf(pre):
            rep.rows.append(OracleRow(pr.env1, pr.env2, pre, float("nan"), 0.0, "Pass", "pre infinite"))
            continue
        in1 = CqState.simple(pr.env1, partial_trace(pr.rho, 2, split))
        in2 = CqState.simple(pr.env2, partial_trace(pr.rho, 1, split))
        r1 = denote(j.c1, in1, ctx.opts.sem, decls=ctx.decls, space=ctx.space1)
        r2 = denote(j.c2, in2, ctx.opts.sem, decls=ctx.decls, space=ctx.space2)
        residual = max(r1.residual_trace, r2.residual_trace)
        out1, out2 = r1.output, r2.output
        if abs(out1.trace() - out2.trace()) > max(tol, 1e-9):
            rep.rows.append(OracleRow(pr.env1, pr.env2, pre, float("inf"), residual,
                                      "Fail" if residual <= tol else "Inconclusive", "mass mismatch"))
            continue
        inst = TransportInstance.from_assertion(out1, out2, j.post, ctx.joint)
        res = solve_ivp(inst, tol=min(ctx.opts.solver_tol, tol), max_iters=ctx.opts.solver_max_iters)
        low = res.dual_value if res.dual_value is not None and np.isfinite(res.primal_value) else res.primal_value
        if residual > tol:
            status = "Inconclusive"
        elif res.primal_value <= pre + tol:
            status = "Pass"
        elif low > pre + tol:
            status = "Fail"
        else:
            status = "Inconclusive"
        rep.rows.append(OracleRow(pr.env1, pr.env2, pre, res.primal_value, residual, status,
                                  f"{res.method}/{res.status}", res.coupling))
    return rep


# ---------------------------------------------------------------------------
# probes


ENUM_CAP = 200_000


def random_probes(j: Judgment, ctx, count: int, rng=None) -> list:
    """Random probes whose state lies in the finite subspace of the pre-condition."""
    rng = rng or ctx.rng
    names1 = set(ctx.vars1) | {v for v in j.pre.free_vars() if ctx.side_of(v) != 2}
    names2 = set(ctx.vars2) | {v for v in j.pre.free_vars() if ctx.side_of(v) == 2}
    names1 |= classical_vars(j.c1)
    names2 |= classical_vars(j.c2)
    envs1, envs2 = ctx.envs(names1), ctx.envs(names2)
    out, tries = [], 0

    def probe(e1, e2):
        P = ctx.ev(j.pre, e1.update(e2))
        if P.is_infinity:
            return None
        V = subspace_basis(np.eye(P.dim) - P.inf) if not P.is_bounded else np.eye(P.dim, dtype=complex)
        return Probe(e1, e2, random_state_on(V, rng))

    while len(out) < count and tries < 50 * count:
        tries += 1
        pr = probe(envs1[int(rng.integers(len(envs1)))], envs2[int(rng.integers(len(envs2)))])
        if pr is not None:
            out.append(pr)
    if len(out) < count and len(envs1) * len(envs2) <= ENUM_CAP:
        # admissible pairs are rare: enumerate them and sample from the list
        ok = [(e1, e2) for e1 in envs1 for e2 in envs2 if not ctx.ev(j.pre, e1.update(e2)).is_infinity]
        while ok and len(out) < count:
            out.append(probe(*ok[int(rng.integers(len(ok)))]))
    return out


def load_probes(path_or_data, ctx) -> list:
    """Probe file: {"probes": [{"env1": {...}, "env2": {...}, "rho": M | "ket": v | "mixed": true}]}.

    Matrices and vectors use [re, im] entries (plain reals accepted) on the joint space."""
    if isinstance(path_or_data, (str, bytes)) and not str(path_or_data).lstrip().startswith("{"):
        with open(path_or_data) as fh:
            data = json.load(fh)
    elif isinstance(path_or_data, (str, bytes)):
        data = json.loads(path_or_data)
    else:
        data = path_or_data
    items = data["probes"] if isinstance(data, dict) else data
    d = ctx.joint.dim
    out = []
    for it in items:
        if "rho" in it:
            rho = matrix_from_json(it["rho"])
        elif "ket" in it:
            v = vector_from_json(it["ket"])
            v = v / np.linalg.norm(v)
            rho = np.outer(v, v.conj())
        elif "basis" in it:
            rho = np.zeros((d, d), dtype=complex)
            rho[int(it["basis"]), int(it["basis"])] = 1
        else:
            rho = np.eye(d, dtype=complex) / d
        if rho.shape != (d, d):
            raise DimMismatch(f"probe state of shape {rho.shape} on a joint space of dimension {d}")
        out.append(Probe(Env(it.get("env1", {})), Env(it.get("env2", {})), rho))
    return out


def probes_to_json(probes: list) -> dict:
    return {"probes": [p.to_json() for p in probes]}


def probe_pairs(probes: list) -> list:
    """(joint env, rho) pairs for the coupling-condition search."""
    return [(p.env1.update(p.env2), p.rho) for p in probes]


def maximally_mixed_on(P) -> np.ndarray:
    V = subspace_basis(np.eye(P.dim) - P.inf) if not P.is_bounded else np.eye(P.dim, dtype=complex)
    return V @ dag(V) / max(V.shape[1], 1)
