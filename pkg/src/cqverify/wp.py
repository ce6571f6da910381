"""Weakest preconditions (expectation transformers) over finite classical domains.

Results are extensional: one IVPredicate per environment of the relevant
variables. Loops are computed as the limit of truncated iterates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assertions import Assertion, Evaluator, Table, assertion_expectation
from .cqstate import CqState, Env
from .errors import DomainTooLarge
from .lang.ast import (Abort, Apply, Assign, Command, If, KetExpr, Measure, QInit, Sample, Seq, Skip,
                       While, classical_vars)
from .lang.decls import Decls, Space
from .opalg import IVPredicate, ivp_conjugate, ivp_scale, ivp_sum, subspace_leq


@dataclass(frozen=True)
class WpOpts:
    max_iters: int = 10_000
    tol: float = 1e-10
    stable_rounds: int = 3
    cap: int = 1_000_000


@dataclass
class WpReport:
    result: Table
    loop_converged: dict = field(default_factory=dict)
    iters_used: dict = field(default_factory=dict)
    max_residual_change: float = 0.0
    overflow_envs: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(self.loop_converged.values())

    def to_json(self) -> dict:
        res = self.result
        return {
            "vars": list(res.vars_),
            "registers": list(res.space.regs),
            "entries": [{"env": dict(zip(res.vars_, k)), "pred": v.to_json()}
                        for k, v in sorted(res.entries.items())],
            "loopConverged": {str(k): v for k, v in self.loop_converged.items()},
            "itersUsed": {str(k): v for k, v in self.iters_used.items()},
            "maxResidualChange": self.max_residual_change,
            "overflowEnvs": self.overflow_envs,
        }


class _Engine:
    def __init__(self, decls: Decls, space: Space, names: Sequence[str], opts: WpOpts):
        self.decls = decls
        self.space = space
        self.names = list(names)
        self.pos = {v: i for i, v in enumerate(self.names)}
        self.opts = opts
        ranges = [range(decls.domain(v)[0], decls.domain(v)[1] + 1) for v in self.names]
        size = int(np.prod([len(r) for r in ranges])) if ranges else 1
        if size > opts.cap:
            raise DomainTooLarge(f"{size} environments exceed the enumeration cap {opts.cap}")
        self.keys = list(itertools.product(*ranges))
        self.d = space.dim
        self.zero = IVPredicate.zero(self.d)
        self.converged: dict = {}
        self.iters: dict = {}
        self.max_change = 0.0
        self.overflow: list = []
        self._ops: dict = {}

    def env(self, key) -> Env:
        return Env(dict(zip(self.names, key)))

    def with_value(self, key, var, value):
        lo, hi = self.decls.domain(var)
        if not lo <= value <= hi:
            return None
        k = list(key)
        k[self.pos[var]] = value
        return tuple(k)

    def lift(self, M, regs):
        k = (id(M), tuple(regs))
        if k not in self._ops:
            self._ops[k] = (M, self.space.lift(np.asarray(M, dtype=complex), regs))
        return self._ops[k][1]

    def run(self, c: Command, T: dict) -> dict:
        if isinstance(c, Skip):
            return T
        if isinstance(c, Abort):
            return {k: self.zero for k in self.keys}
        if isinstance(c, Seq):
            for s in reversed(c.cmds):
                T = self.run(s, T)
            return T
        if isinstance(c, Assign):
            out = {}
            for k in self.keys:
                v = c.expr(self.env(k))
                k2 = self.with_value(k, c.var, v)
                if k2 is None:
                    self.overflow.append({"env": dict(zip(self.names, k)), "var": c.var, "value": v})
                    out[k] = self.zero
                else:
                    out[k] = T[k2]
            return out
        if isinstance(c, Sample):
            mu = self.decls.dists[c.dist]
            out = {}
            for k in self.keys:
                terms = []
                for v, p in mu.items():
                    if p <= 0:
                        continue
                    k2 = self.with_value(k, c.var, v)
                    if k2 is None:
                        self.overflow.append({"env": dict(zip(self.names, k)), "var": c.var, "value": v})
                        continue
                    terms.append(ivp_scale(p, T[k2]))
                out[k] = ivp_sum(terms, self.d)
            return out
        if isinstance(c, QInit):
            dreg = self.space.reg_dim(c.regs)
            out = {}
            for k in self.keys:
                if c.ket.name is not None:
                    v = np.asarray(self.decls.ket_vector(c.ket.name), dtype=complex)
                else:
                    i = c.ket.index(self.env(k))
                    if not 0 <= i < dreg:
                        out[k] = self.zero
                        continue
                    v = np.eye(dreg)[i].astype(complex)
                terms = [ivp_conjugate(self.space.lift(np.outer(v, np.eye(dreg)[i]), c.regs), T[k])
                         for i in range(dreg)]
                out[k] = ivp_sum(terms, self.d)
            return out
        if isinstance(c, Apply):
            U = self.lift(self.decls.unitary(c.unitary), c.regs)
            return {k: ivp_conjugate(U, T[k]) for k in self.keys}
        if isinstance(c, Measure):
            ms = [(i, self.lift(M, c.regs)) for i, M in self.decls.meas[c.meas].items()]
            out = {}
            for k in self.keys:
                terms = []
                for i, M in ms:
                    k2 = self.with_value(k, c.var, i)
                    if k2 is None:
                        self.overflow.append({"env": dict(zip(self.names, k)), "var": c.var, "value": i})
                        continue
                    terms.append(ivp_conjugate(M, T[k2]))
                out[k] = ivp_sum(terms, self.d)
            return out
        if isinstance(c, If):
            T1 = self.run(c.then, T)
            T2 = self.run(c.orelse, T)
            return {k: (T1[k] if c.cond(self.env(k)) else T2[k]) for k in self.keys}
        if isinstance(c, While):
            return self.loop(c, T)
        raise TypeError(f"unknown command {c!r}")

    def loop(self, c: While, T: dict) -> dict:
        guard = {k: bool(c.cond(self.env(k))) for k in self.keys}
        cur = {k: (self.zero if guard[k] else T[k]) for k in self.keys}
        stable = 0
        change = np.inf
        n = 0
        key = str(c.span)
        while n < self.opts.max_iters:
            body = self.run(c.body, cur)
            nxt = {k: (body[k] if guard[k] else T[k]) for k in self.keys}
            n += 1
            change, inf_same = 0.0, True
            for k in self.keys:
                a, b = cur[k], nxt[k]
                if a.is_bounded != b.is_bounded or (not a.is_bounded and not (
                        subspace_leq(a.inf, b.inf) and subspace_leq(b.inf, a.inf))):
                    inf_same = False
                change = max(change, float(np.max(np.abs(a.finite - b.finite), initial=0.0)))
            cur = nxt
            stable = stable + 1 if inf_same else 0
            if change < self.opts.tol and stable >= self.opts.stable_rounds:
                break
        ok = change < self.opts.tol and stable >= self.opts.stable_rounds
        self.converged[key] = self.converged.get(key, True) and ok
        self.iters[key] = max(self.iters.get(key, 0), n)
        self.max_change = max(self.max_change, change)
        return cur


def wp(c: Command, phi: Assertion, space: Space, decls: Decls, opts: WpOpts = WpOpts(),
       extra_vars: Sequence[str] = (), name: str = "wp") -> WpReport:
    """wp.c.phi as a table over the variables of c, phi and extra_vars."""
    names = decls.order_cvars(set(classical_vars(c)) | set(phi.free_vars()) | set(extra_vars))
    eng = _Engine(decls, space, names, opts)
    ev = Evaluator(space)
    T = {k: ev(phi, eng.env(k)) for k in eng.keys}
    out = eng.run(c, T)
    table = Table(tuple(names), out, space, name=name)
    return WpReport(table, eng.converged, eng.iters, eng.max_change, eng.overflow)


def wp_identity_check(c: Command, phi: Assertion, delta: CqState, space: Space, decls: Decls,
                      tol: float = 1e-7, opts: WpOpts = WpOpts(), sem_opts=None) -> tuple[bool, float, float]:
    """Compare E_delta[wp.c.phi] with E_{[c](delta)}[phi]; returns (ok, lhs, rhs).

    Domain overflow is treated as abort on both sides; the loop residual of the
    forward run is folded into the tolerance, scaled by the largest finite value of phi.
    """
    from .semantics import SemOpts, denote
    sem_opts = sem_opts or SemOpts(on_overflow="abort")
    rep = wp(c, phi, space, decls, opts)
    lhs = assertion_expectation(delta, rep.result, space)
    run = denote(c, delta, sem_opts, decls=decls, space=space)
    rhs = assertion_expectation(run.output, phi, space)
    if np.isinf(lhs) or np.isinf(rhs):
        return bool(np.isinf(lhs) and np.isinf(rhs)), lhs, rhs
    bound = 0.0
    if run.residual_trace > 0:
        ev = Evaluator(space)
        names = decls.order_cvars(set(classical_vars(c)) | set(phi.free_vars()))
        from .lang.decls import enumerate_envs
        bound = max((ev(phi, e).norm() for e in enumerate_envs(decls, names)), default=0.0)
    return abs(lhs - rhs) <= tol + run.residual_trace * bound, lhs, rhs
