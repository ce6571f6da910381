"""Coupling conditions g1 ~ g2 : psi => Phi for samplings and measurements.

A witness fixes, per outcome pair (i, j), Kraus operators K on the joint space
so that Delta(i, j) = sum_K K rho K^dag. Such witnesses are linear in rho, so the
marginal equations and the inequality are decided exactly on an operator basis
of the finite subspace of psi(sigma). The `search` witness instead solves a
transport problem per probe (or exactly per environment when both sides sample).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assertions import Assertion, LabOp, _slack
from ..cqstate import CqState, Env
from ..errors import InequalityFailed, MissingWitness, NotACoupling
from ..lang.ast import Measure, Sample
from ..opalg import IVPredicate, dag, ivp_conjugate, ivp_expect, ivp_leq, ivp_scale, ivp_sum, partial_trace, subspace_basis
from ..transport import TransportInstance, classical_ot, solve_ivp


@dataclass
class EvalSpec:
    """Eval(mu) or Eval(M)[regs] for the statement on one side, bound to variable var."""

    side: int
    var: str
    kind: str  # "dist" or "meas"
    table: dict  # outcome -> probability (dist) or operator (meas)
    regs: tuple = ()
    label: str = ""

    @classmethod
    def from_command(cls, c, side: int, decls) -> "EvalSpec":
        if isinstance(c, Sample):
            return cls(side, c.var, "dist", dict(decls.dists[c.dist]), (), c.dist)
        if isinstance(c, Measure):
            ops = {k: np.asarray(M, dtype=complex) for k, M in decls.meas[c.meas].items()}
            return cls(side, c.var, "meas", ops, tuple(c.regs), c.meas)
        raise TypeError(f"not a sampling or measurement: {c!r}")

    def outcomes(self) -> list[int]:
        if self.kind == "dist":
            return [k for k, p in self.table.items() if p > 0]
        return list(self.table)

    def weight(self, i: int) -> float:
        return float(self.table.get(i, 0.0)) if self.kind == "dist" else 1.0

    def joint_op(self, i: int, joint) -> np.ndarray:
        if self.kind == "dist":
            return np.eye(joint.dim, dtype=complex)
        return joint.lift(self.table[i], self.regs)

    def apply(self, rho: np.ndarray, space) -> dict:
        """g(rho) as {outcome: operator} on the side's register space."""
        if self.kind == "dist":
            return {i: self.table[i] * rho for i in self.outcomes()}
        out = {}
        for i in self.outcomes():
            M = space.lift(self.table[i], self.regs)
            out[i] = M @ rho @ dag(M)
        return out


@dataclass
class Witness:
    kind: str  # diag, product, table, weights, kraus, search
    table: dict = field(default_factory=dict)   # (i, j) -> weight
    kraus: dict = field(default_factory=dict)   # (i, j) -> list of (scalar, [LabOp, ...])

    def describe(self) -> str:
        if self.kind in ("table", "weights"):
            return f"{self.kind} " + ", ".join(f"({i},{j}):{p:g}" for (i, j), p in sorted(self.table.items()))
        if self.kind == "kraus":
            return f"kraus over pairs {sorted(self.kraus)}"
        return self.kind


def parse_witness(node, reader) -> Witness:
    """diag | product | search | (table (i j) p ...) | (weights ...) | (kraus ((i j) K ...) ...).

    A Kraus operator is a labelled operator (M r ...), a product (* (M r) (N s) ...),
    or a scaled product (* 0.5 (M r) ...)."""
    if node is None:
        return Witness("search")
    if isinstance(node, str):
        if node not in ("diag", "product", "search"):
            raise MissingWitness(f"unknown witness '{node}'")
        return Witness(node)
    head = node[0] if node else None
    if head in ("table", "weights"):
        items = node[1:]
        if len(items) % 2:
            raise MissingWitness(f"{head} witness needs (i j) p pairs")
        tab = {}
        for k in range(0, len(items), 2):
            i, j = items[k]
            tab[(int(i), int(j))] = reader.number(items[k + 1])
        return Witness(head, tab)
    if head == "kraus":
        kr: dict = {}
        for entry in node[1:]:
            (i, j), ops = entry[0], entry[1:]
            kr[(int(i), int(j))] = [_kraus_term(K, reader) for K in ops]
        return Witness("kraus", kraus=kr)
    raise MissingWitness(f"unrecognised witness form {node!r}")


def _kraus_term(node, reader):
    if isinstance(node, list) and node and node[0] == "*":
        scale, ops = 1.0, []
        for part in node[1:]:
            if isinstance(part, list):
                ops.append(reader.labop(part))
            else:
                scale *= reader.number(part)
        return scale, ops
    return 1.0, [reader.labop(node)]


def kraus_operators(g1: EvalSpec, g2: EvalSpec, w: Witness, joint) -> dict:
    """(i, j) -> list of joint Kraus operators realising the witness."""
    if w.kind == "kraus":
        out = {}
        for key, terms in w.kraus.items():
            ks = []
            for s, ops in terms:
                K = s * np.eye(joint.dim, dtype=complex)
                for lop in ops:
                    K = K @ lop.lifted(joint)
                ks.append(K)
            out[key] = ks
        return out
    o1, o2 = g1.outcomes(), g2.outcomes()
    if w.kind == "product":
        wt = {(i, j): g1.weight(i) * g2.weight(j) for i in o1 for j in o2}
    elif w.kind == "diag":
        both_dist = g1.kind == "dist" and g2.kind == "dist"
        wt = {(i, i): (g1.weight(i) if both_dist else 1.0) for i in o1 if i in o2}
    elif w.kind == "weights":
        wt = dict(w.table)
    elif w.kind == "table":
        if g1.kind == "meas" and g2.kind == "meas":
            raise MissingWitness("a joint-distribution table needs a sampling side; use weights or kraus")
        if g1.kind == "dist" and g2.kind == "dist":
            wt = dict(w.table)
        else:
            msum: dict = {}
            mside = 0 if g1.kind == "meas" else 1
            for key, p in w.table.items():
                msum[key[mside]] = msum.get(key[mside], 0.0) + p
            wt = {key: (p / msum[key[mside]] if msum[key[mside]] > 0 else 0.0) for key, p in w.table.items()}
    else:
        raise MissingWitness(f"witness '{w.kind}' has no Kraus form")
    out = {}
    for (i, j), p in wt.items():
        if p <= 0:
            continue
        if i not in g1.table or j not in g2.table:
            raise NotACoupling(f"witness pair ({i},{j}) is not an outcome pair")
        out[(i, j)] = [np.sqrt(p) * g1.joint_op(i, joint) @ g2.joint_op(j, joint)]
    return out


@dataclass
class CouplingVerdict:
    ok: bool
    mode: str  # "exact" or "probes"
    envs_checked: int = 0
    probes_checked: int = 0
    witness: str = ""
    min_slack: float = float("inf")
    plans: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"ok": self.ok, "mode": self.mode, "envsChecked": self.envs_checked,
                "probesChecked": self.probes_checked, "witness": self.witness,
                "minSlack": None if not np.isfinite(self.min_slack) else self.min_slack,
                "plans": self.plans[:8]}


def _phi_at(ctx, phi: Assertion, g1: EvalSpec, g2: EvalSpec, env: Env, i: int, j: int) -> IVPredicate:
    return ctx.ev(phi, env.set(g1.var, i).set(g2.var, j))


def _condition_envs(ctx, psi: Assertion, phi: Assertion, g1: EvalSpec, g2: EvalSpec) -> list[Env]:
    names = set(psi.free_vars()) | (set(phi.free_vars()) - {g1.var, g2.var})
    return ctx.envs(names)


def check_coupling_condition(g1: EvalSpec, g2: EvalSpec, psi: Assertion, phi: Assertion, witness: Witness,
                             ctx, probes: list | None = None) -> CouplingVerdict:
    """Decide g1 ~ g2 : psi => lambda(i, j). phi[i/x1, j/x2].

    Raises NotACoupling when the witness has wrong marginals and
    InequalityFailed(env, slack) when the expectation inequality fails.
    """
    if witness.kind == "search":
        if g1.kind == "dist" and g2.kind == "dist":
            return _search_classical(g1, g2, psi, phi, ctx)
        return _search_probes(g1, g2, psi, phi, ctx, probes)
    return _check_exact(g1, g2, psi, phi, witness, ctx)


def _check_exact(g1, g2, psi, phi, witness, ctx) -> CouplingVerdict:
    tol = ctx.opts.coupling_tol
    joint = ctx.joint
    ks = kraus_operators(g1, g2, witness, joint)
    verdict = CouplingVerdict(True, "exact", witness=witness.describe())
    checked_spaces: set = set()
    for env in _condition_envs(ctx, psi, phi, g1, g2):
        P = ctx.ev(psi, env)
        if P.is_infinity:
            continue
        verdict.envs_checked += 1
        V = subspace_basis(np.eye(P.dim) - P.inf) if not P.is_bounded else np.eye(P.dim, dtype=complex)
        key = np.round(V @ dag(V), 10).tobytes()
        if key not in checked_spaces:
            _check_marginals(g1, g2, ks, V, ctx)
            checked_spaces.add(key)
        terms = [ivp_conjugate(K, _phi_at(ctx, phi, g1, g2, env, i, j)) for (i, j), kl in ks.items() for K in kl]
        L = ivp_sum(terms, P.dim)
        if not ivp_leq(L, P, tol):
            raise InequalityFailed(dict(env), _slack(L, P))
        verdict.min_slack = min(verdict.min_slack, _slack(L, P))
    return verdict


def _check_marginals(g1, g2, ks, V, ctx):
    """Delta(i, j) = sum K E K^dag must have marginals g1(tr2 E), g2(tr1 E) for E on span(V)."""
    tol = ctx.opts.coupling_tol
    split = ctx.split
    n = V.shape[1]
    for a in range(n):
        for b in range(n):
            E = np.outer(V[:, a], V[:, b].conj())
            want1 = g1.apply(partial_trace(E, 2, split), ctx.space1)
            want2 = g2.apply(partial_trace(E, 1, split), ctx.space2)
            got1 = {i: np.zeros((split[0], split[0]), dtype=complex) for i in want1}
            got2 = {j: np.zeros((split[1], split[1]), dtype=complex) for j in want2}
            for (i, j), kl in ks.items():
                D = sum(K @ E @ dag(K) for K in kl)
                got1[i] = got1.get(i, 0) + partial_trace(D, 2, split)
                got2[j] = got2.get(j, 0) + partial_trace(D, 1, split)
            for got, want, side in ((got1, want1, 1), (got2, want2, 2)):
                for k in set(got) | set(want):
                    err = np.max(np.abs(got.get(k, 0) - want.get(k, 0)))
                    if err > tol:
                        raise NotACoupling(f"side-{side} marginal at outcome {k} is off by {err:.3g}")


def _search_classical(g1, g2, psi, phi, ctx) -> CouplingVerdict:
    """Both sides sample: per environment, an optimal coupling of mu1, mu2 is checked exactly."""
    tol = ctx.opts.coupling_tol
    o1, o2 = g1.outcomes(), g2.outcomes()
    mu1 = np.array([g1.table[i] for i in o1])
    mu2 = np.array([g2.table[j] for j in o2])
    verdict = CouplingVerdict(True, "exact", witness="search (optimal transport per environment)")
    for env in _condition_envs(ctx, psi, phi, g1, g2):
        P = ctx.ev(psi, env)
        if P.is_infinity:
            continue
        verdict.envs_checked += 1
        F = {(i, j): _phi_at(ctx, phi, g1, g2, env, i, j) for i in o1 for j in o2}
        cost = np.array([[_scalar_bound(F[(i, j)]) for j in o2] for i in o1])
        val, plan, _, _ = classical_ot(mu1, mu2, cost)
        if plan is None:
            raise InequalityFailed(dict(env), float("-inf"))
        L = ivp_sum([ivp_scale(float(plan[a, b]), F[(i, j)]) for a, i in enumerate(o1)
                     for b, j in enumerate(o2) if plan[a, b] > 1e-15], P.dim)
        if not ivp_leq(L, P, tol):
            raise InequalityFailed(dict(env), _slack(L, P))
        verdict.min_slack = min(verdict.min_slack, _slack(L, P))
        if len(verdict.plans) < 8:
            verdict.plans.append({"env": dict(env), "value": val,
                                  "plan": {f"{i},{j}": float(plan[a, b]) for a, i in enumerate(o1)
                                           for b, j in enumerate(o2) if plan[a, b] > 1e-15}})
    return verdict


def _scalar_bound(A: IVPredicate) -> float:
    if not A.is_bounded:
        return float("inf")
    return float(np.max(np.linalg.eigvalsh(A.finite), initial=0.0))


def random_state_on(V: np.ndarray, rng) -> np.ndarray:
    """A random density operator supported on the span of the columns of V."""
    n = V.shape[1]
    r = int(rng.integers(1, n + 1))
    G = rng.normal(size=(n, r)) + 1j * rng.normal(size=(n, r))
    S = G @ dag(G)
    S /= np.trace(S).real
    return V @ S @ dag(V)


def coupling_probes(ctx, psi: Assertion, names, count: int) -> list:
    """(env, rho) pairs with rho on the finite subspace of psi(env); mixed and random states."""
    envs = [e for e in ctx.envs(names) if not ctx.ev(psi, e).is_infinity]
    if not envs:
        return []
    idx = ctx.rng.choice(len(envs), size=min(count, len(envs)), replace=False)
    out = []
    for k in sorted(idx):
        env = envs[int(k)]
        P = ctx.ev(psi, env)
        V = subspace_basis(np.eye(P.dim) - P.inf) if not P.is_bounded else np.eye(P.dim, dtype=complex)
        out.append((env, V @ dag(V) / V.shape[1]))
        out.append((env, random_state_on(V, ctx.rng)))
    return out


def _search_probes(g1, g2, psi, phi, ctx, probes) -> CouplingVerdict:
    """Per probe (sigma, rho): min over couplings of the outcome marginals, by exact-support transport."""
    tol = max(ctx.opts.coupling_tol, ctx.opts.solver_tol)
    names = set(psi.free_vars()) | (set(phi.free_vars()) - {g1.var, g2.var})
    if probes is None:
        probes = coupling_probes(ctx, psi, names, ctx.opts.probes)
    verdict = CouplingVerdict(True, "probes", witness="search (transport per probe)")
    split = ctx.split
    for env, rho in probes:
        env = Env(env)
        P = ctx.ev(psi, env)
        lhs = ivp_expect(P, rho, check=False)
        if np.isinf(lhs):
            continue
        m1 = g1.apply(partial_trace(rho, 2, split), ctx.space1)
        m2 = g2.apply(partial_trace(rho, 1, split), ctx.space2)
        d1 = CqState(split[0], {Env({g1.var: i}): r for i, r in m1.items()}, prune_tol=1e-14)
        d2 = CqState(split[1], {Env({g2.var: j}): r for j, r in m2.items()}, prune_tol=1e-14)
        inst = TransportInstance(d1, d2, lambda e1, e2, env=env: _phi_at(ctx, phi, g1, g2, env, e1[g1.var], e2[g2.var]))
        res = solve_ivp(inst, tol=tol, max_iters=ctx.opts.solver_max_iters)
        verdict.probes_checked += 1
        slack = lhs - res.primal_value
        verdict.min_slack = min(verdict.min_slack, slack)
        if len(verdict.plans) < 8:
            verdict.plans.append({"env": dict(env), "pre": lhs, "minPost": res.primal_value, "status": res.status})
        if not slack >= -tol:
            raise InequalityFailed(dict(env), slack)
    return verdict
