"""Proof rules of the relational logic, applied backward to a goal.

A rule looks at the last statement of one or both sides, computes the
assertion that must hold before it and returns the premises (subgoals) and the
side conditions it decided. Structural misuse raises RuleMismatch or
MissingWitness; failed side conditions are recorded, not raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assertions import (Add, Assertion, Conj, DistExpect, Guard, InitPre, LabOp, MeasPre, PairExpect,
                          Split, Subst, Trunc, const, subst_assertion)
from ..cqstate import CqState
from ..errors import CqError, InequalityFailed, MissingWitness, NotACoupling, RuleMismatch
from ..lang.ast import (Apply, Assign, BinOp, Command, If, Measure, Num, QInit, Sample, While, conj, has_abort,
                        has_loop, iff, mod_vars, neg, seq, statements)
from ..semantics import SemOpts, check_hast
from ..wp import wp
from .coupling import EvalSpec, check_coupling_condition, kraus_operators, parse_witness
from .judgment import Judgment, one_line

FAMILY_RULES = {"NMod", "Unbounded-Duality", "TruncLimit"}


@dataclass
class SideCondition:
    kind: str  # entails, coupling, ast, hast, wp-converged, marginals, support, oracle, mod
    description: str
    ok: bool
    tol: float = 0.0
    slack: float | None = None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        s = self.slack
        if s is not None and not np.isfinite(s):
            s = "inf" if s > 0 else "-inf"
        return {"kind": self.kind, "description": self.description, "ok": self.ok, "tol": self.tol,
                "slack": s, "detail": self.detail}


@dataclass
class Outcome:
    subgoals: list = field(default_factory=list)
    sides: list = field(default_factory=list)
    assumptions: list = field(default_factory=list)
    evidence: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.sides)


# ---------------------------------------------------------------------------
# helpers


def split_last(c: Command):
    """(prefix, last statement) of c, or (None, None) for skip."""
    st = statements(c)
    if not st:
        return None, None
    return seq(*st[:-1]), st[-1]


def _last(goal: Judgment, k: int, kind, rule: str):
    prefix, last = split_last(goal.side(k))
    if last is None or (kind is not None and not isinstance(last, kind)):
        names = kind.__name__ if isinstance(kind, type) else "/".join(t.__name__ for t in kind)
        found = "skip" if last is None else type(last).__name__
        raise RuleMismatch(f"{rule}: side {k} must end in {names}, found {found}")
    return prefix, last


def _with_side(goal: Judgment, k: int, c: Command, **kw) -> Judgment:
    return goal.replace(**({"c1": c} if k == 1 else {"c2": c}), **kw)


def _assn(ctx, node, what: str, rule: str) -> Assertion:
    if node is None or node is True:
        raise MissingWitness(f"{rule} needs `{what}`")
    if isinstance(node, Assertion):
        return node
    return ctx.reader.assertion(node)


def entail_side(ctx, phi: Assertion, psi: Assertion, desc: str) -> SideCondition:
    try:
        res = ctx.entail(phi, psi)
    except CqError as exc:
        return SideCondition("entails", desc, False, ctx.opts.entail_tol, detail={"error": str(exc)})
    detail = {"envsChecked": res.envs_checked}
    if not res.holds:
        detail["counterexample"] = res.counterexample
    return SideCondition("entails", desc, res.holds, ctx.opts.entail_tol, None if res.holds else res.slack, detail)


def _side_probes(ctx, k: int, cap: int = 16) -> list:
    envs = ctx.envs(ctx.side_vars(k))
    if len(envs) > cap:
        idx = np.linspace(0, len(envs) - 1, cap).round().astype(int)
        envs = [envs[i] for i in sorted(set(idx))]
    d = ctx.side_space(k).dim
    return [CqState.simple(e, np.eye(d, dtype=complex) / d) for e in envs]


def ast_evidence(ctx, k: int, c: Command, step, what: str):
    """Termination evidence for c on side k: (SideCondition, assumption or None)."""
    if not has_loop(c) and not has_abort(c):
        return SideCondition("ast", f"{what} terminates (loop-free)", True, detail={"mode": "syntactic"}), None
    opts = SemOpts(loop_max_iters=ctx.opts.hast_iters, loop_residual_tol=ctx.opts.sem.loop_residual_tol,
                   on_overflow="abort")
    v = check_hast(c, _side_probes(ctx, k), opts, ctx.decls, ctx.side_space(k))
    detail = {"mode": "probes", "status": v.status, "maxResidual": v.max_residual, "reason": v.reason}
    if v.passed:
        return SideCondition("ast", f"{what} terminates", True, opts.loop_residual_tol, detail=detail), None
    assumed = step is not None and (step.args.get("assume") == "ast" or ctx.opts.assume_ast)
    if assumed:
        detail["assumed"] = True
        return (SideCondition("ast", f"{what} terminates (assumed)", True, opts.loop_residual_tol, detail=detail),
                f"almost-sure termination of {what} assumed")
    return SideCondition("ast", f"{what} terminates", False, opts.loop_residual_tol, detail=detail), None


def hast_info(ctx, k: int, c: Command) -> dict:
    opts = SemOpts(loop_max_iters=ctx.opts.hast_iters, loop_residual_tol=ctx.opts.sem.loop_residual_tol,
                   on_overflow="abort")
    v = check_hast(c, _side_probes(ctx, k, ctx.opts.hast_probes), opts, ctx.decls, ctx.side_space(k))
    return {"kind": "hast", "side": k, "program": one_line(c)[:120], "status": v.status,
            "maxResidual": v.max_residual, "reason": v.reason}


def _wp_joint(ctx, c: Command, phi: Assertion, name: str):
    rep = wp(c, phi, ctx.joint, ctx.decls, ctx.opts.wp, name=name)
    side = SideCondition("wp-converged", f"wp of {one_line(c)[:60]} converged", rep.converged, ctx.opts.wp.tol,
                         detail={"itersUsed": {str(a): b for a, b in rep.iters_used.items()},
                                 "maxChange": rep.max_residual_change})
    return rep.result, side


def _ket_of(ctx, c: QInit):
    if c.ket.name is not None:
        return np.asarray(ctx.decls.ket_vector(c.ket.name), dtype=complex)
    return c.ket


# ---------------------------------------------------------------------------
# one-sided statement rules


def _one_sided(goal, step, ctx, k: int) -> Outcome:
    base = step.rule[:-2]
    kinds = {"Assign": Assign, "Sample": Sample, "Init": QInit, "Apply": Apply, "Measure": Measure}
    prefix, s = _last(goal, k, kinds[base], step.rule)
    Q = goal.post
    if base == "Assign":
        xi = Subst(Q, ((s.var, s.expr),))
    elif base == "Sample":
        xi = DistExpect(dict(ctx.decls.dists[s.dist]), s.var, Q, s.dist)
    elif base == "Init":
        xi = InitPre(tuple(s.regs), _ket_of(ctx, s), Q)
    elif base == "Apply":
        xi = Conj(LabOp(ctx.decls.unitary(s.unitary), tuple(s.regs), s.unitary), Q)
    else:
        meas = {i: np.asarray(M, dtype=complex) for i, M in ctx.decls.meas[s.meas].items()}
        xi = MeasPre(meas, tuple(s.regs), s.var, Q, s.meas)
    return Outcome([_with_side(goal, k, prefix, post=xi)])


def _if_one(goal, step, ctx, k: int) -> Outcome:
    prefix, s = _last(goal, k, If, step.rule)
    other = goal.side(3 - k)

    def pair(mine, theirs):
        return (mine, theirs) if k == 1 else (theirs, mine)

    if step.args.get("pre") is not None:
        xi = _assn(ctx, step.args["pre"], "pre", step.rule)
        return Outcome([Judgment(Guard(s.cond, xi), *pair(s.then, seq()), goal.post),
                        Judgment(Guard(neg(s.cond), xi), *pair(s.orelse, seq()), goal.post),
                        Judgment(goal.pre, *pair(prefix, other), xi)])
    if statements(prefix):
        raise MissingWitness(f"{step.rule}: the conditional is not the first statement; give `pre`")
    return Outcome([Judgment(Guard(s.cond, goal.pre), *pair(s.then, other), goal.post),
                    Judgment(Guard(neg(s.cond), goal.pre), *pair(s.orelse, other), goal.post)])


def _while_one(goal, step, ctx, k: int) -> Outcome:
    prefix, s = _last(goal, k, While, step.rule)
    psi = _assn(ctx, step.args.get("invariant"), "invariant", step.rule)
    out = Outcome()
    out.sides.append(entail_side(ctx, goal.post, Guard(neg(s.cond), psi), "post below invariant at loop exit"))
    side, assumption = ast_evidence(ctx, k, s, step, f"loop on side {k}")
    out.sides.append(side)
    if assumption:
        out.assumptions.append(assumption)
    body = Judgment(Guard(s.cond, psi), s.body, seq(), psi) if k == 1 else Judgment(Guard(s.cond, psi), seq(), s.body, psi)
    out.subgoals = [body, _with_side(goal, k, prefix, post=psi)]
    return out


def _wp_one(goal, step, ctx, k: int) -> Outcome:
    st = statements(goal.side(k))
    if not st:
        raise RuleMismatch(f"{step.rule}: side {k} is skip")
    n = step.args.get("count", 1)
    n = len(st) if n == "all" else int(n)
    if not 1 <= n <= len(st):
        raise RuleMismatch(f"{step.rule}: cannot take {n} of {len(st)} statements")
    tail, prefix = seq(*st[-n:]), seq(*st[:-n])
    xi, side = _wp_joint(ctx, tail, goal.post, f"wp{k}")
    return Outcome([_with_side(goal, k, prefix, post=xi)], [side])


# ---------------------------------------------------------------------------
# two-sided rules


def _assign2(goal, step, ctx) -> Outcome:
    p1, s1 = _last(goal, 1, Assign, "Assign")
    p2, s2 = _last(goal, 2, Assign, "Assign")
    xi = Subst(goal.post, ((s1.var, s1.expr), (s2.var, s2.expr)))
    return Outcome([Judgment(goal.pre, p1, p2, xi)])


def _if2(goal, step, ctx) -> Outcome:
    p1, s1 = _last(goal, 1, If, "If")
    p2, s2 = _last(goal, 2, If, "If")
    psi = _assn(ctx, step.args["pre"], "pre", "If") if step.args.get("pre") is not None else goal.pre
    both = conj(s1.cond, s2.cond)
    neither = conj(neg(s1.cond), neg(s2.cond))
    return Outcome([Judgment(Guard(both, psi), s1.then, s2.then, goal.post),
                    Judgment(Guard(neither, psi), s1.orelse, s2.orelse, goal.post),
                    Judgment(goal.pre, p1, p2, Guard(iff(s1.cond, s2.cond), psi))])


def _while2(goal, step, ctx) -> Outcome:
    p1, s1 = _last(goal, 1, While, "While")
    p2, s2 = _last(goal, 2, While, "While")
    psi = _assn(ctx, step.args.get("invariant"), "invariant", "While")
    same = iff(s1.cond, s2.cond)
    out = Outcome()
    out.sides.append(entail_side(ctx, goal.post, Guard(conj(neg(s1.cond), neg(s2.cond)), psi),
                                 "post below invariant at joint loop exit"))
    if ctx.opts.hast_report:
        out.evidence += [hast_info(ctx, 1, s1), hast_info(ctx, 2, s2)]
    out.subgoals = [Judgment(Guard(conj(s1.cond, s2.cond), psi), s1.body, s2.body, Guard(same, psi)),
                    Judgment(goal.pre, p1, p2, Guard(same, psi))]
    return out


def _kraus_pre(ks: dict, g1: EvalSpec, g2: EvalSpec, post: Assertion, joint) -> Assertion:
    terms = []
    for (i, j), kl in ks.items():
        body = Subst(post, ((g1.var, Num(i)), (g2.var, Num(j))))
        terms += [Conj(LabOp(K, joint.regs, f"K{i}{j}"), body) for K in kl]
    return Add(tuple(terms))


def _coupling(goal, step, ctx) -> Outcome:
    want = {"Sample": (Sample, Sample), "Measure": (Measure, Measure)}.get(step.rule)
    p1, s1 = _last(goal, 1, want[0] if want else (Sample, Measure), step.rule)
    p2, s2 = _last(goal, 2, want[1] if want else (Sample, Measure), step.rule)
    if want is None and type(s1) is type(s2):
        raise RuleMismatch(f"Measure-Sample needs one sampling and one measurement, found two {type(s1).__name__}")
    g1 = EvalSpec.from_command(s1, 1, ctx.decls)
    g2 = EvalSpec.from_command(s2, 2, ctx.decls)
    w = parse_witness(step.args.get("witness"), ctx.reader)
    if step.args.get("pre") is not None:
        psi = _assn(ctx, step.args["pre"], "pre", step.rule)
    elif w.kind == "search":
        raise MissingWitness(f"{step.rule}: a `search` witness needs an explicit `pre`")
    else:
        psi = _kraus_pre(kraus_operators(g1, g2, w, ctx.joint), g1, g2, goal.post, ctx.joint)
    desc = f"{g1.label}[{g1.var}] ~ {g2.label}[{g2.var}] coupled by {w.describe()}"
    out = Outcome()
    try:
        v = check_coupling_condition(g1, g2, psi, goal.post, w, ctx)
        side = SideCondition("coupling", desc, True, ctx.opts.coupling_tol, v.min_slack, v.to_json())
        if v.mode == "probes":
            out.evidence.append({"kind": "coupling-probes", "probes": v.probes_checked})
    except NotACoupling as exc:
        side = SideCondition("coupling", desc, False, ctx.opts.coupling_tol, detail={"error": "NotACoupling",
                                                                                     "message": str(exc)})
    except InequalityFailed as exc:
        side = SideCondition("coupling", desc, False, ctx.opts.coupling_tol, exc.slack,
                             {"error": "InequalityFailed", "message": str(exc)})
    out.sides.append(side)
    out.subgoals.append(Judgment(goal.pre, p1, p2, psi))
    return out


def _sample_supp(goal, step, ctx) -> Outcome:
    p1, s1 = _last(goal, 1, Sample, "Sample-Supp")
    p2, s2 = _last(goal, 2, Sample, "Sample-Supp")
    w = parse_witness(step.args.get("witness"), ctx.reader)
    if w.kind not in ("table", "diag", "product"):
        raise MissingWitness("Sample-Supp needs a joint distribution witness (table, diag or product)")
    xi_node = step.args.get("cond")
    xi = ctx.reader.expr(xi_node) if xi_node not in (None, True) else Num(1)
    g1 = EvalSpec.from_command(s1, 1, ctx.decls)
    g2 = EvalSpec.from_command(s2, 2, ctx.decls)
    if w.kind == "table":
        mu = dict(w.table)
    elif w.kind == "diag":
        mu = {(i, i): g1.weight(i) for i in g1.outcomes()}
    else:
        mu = {(i, j): g1.weight(i) * g2.weight(j) for i in g1.outcomes() for j in g2.outcomes()}
    mu = {k: p for k, p in mu.items() if p > 0}
    out = Outcome()
    m1: dict = {}
    m2: dict = {}
    for (i, j), p in mu.items():
        m1[i] = m1.get(i, 0.0) + p
        m2[j] = m2.get(j, 0.0) + p
    err = max([abs(m1.get(i, 0.0) - g1.weight(i)) for i in set(m1) | set(g1.outcomes())]
              + [abs(m2.get(j, 0.0) - g2.weight(j)) for j in set(m2) | set(g2.outcomes())])
    out.sides.append(SideCondition("marginals", "witness has the sampled marginals", err <= ctx.opts.coupling_tol,
                                   ctx.opts.coupling_tol, -err))
    names = xi.free_vars() - {s1.var, s2.var}
    bad = None
    for env in ctx.envs(names):
        for (i, j) in mu:
            if not xi(env.set(s1.var, i).set(s2.var, j)):
                bad = {"env": dict(env), "pair": [i, j]}
                break
        if bad:
            break
    out.sides.append(SideCondition("support", "witness support inside the condition", bad is None,
                                   detail=bad or {}))
    Q = goal.post
    b, psi = (Q.cond, Q.body) if isinstance(Q, Guard) else (Num(1), Q)
    doms = (ctx.decls.domain(s1.var), ctx.decls.domain(s2.var))
    from ..assertions import ForallExpr
    pre = Guard(ForallExpr((s1.var, s2.var), doms, BinOp("->", xi, b)), PairExpect(mu, s1.var, s2.var, psi))
    out.subgoals.append(Judgment(goal.pre, p1, p2, pre))
    return out


def _seq(goal, step, ctx) -> Outcome:
    xi = _assn(ctx, step.args.get("mid"), "mid", "Seq")
    at = step.args.get("at")
    if not isinstance(at, list) or len(at) != 2:
        raise MissingWitness("Seq needs `at (k1 k2)`")
    k1, k2 = int(at[0]), int(at[1])
    st1, st2 = statements(goal.c1), statements(goal.c2)
    if not (0 <= k1 <= len(st1) and 0 <= k2 <= len(st2)):
        raise RuleMismatch(f"Seq: split point ({k1} {k2}) outside programs of length ({len(st1)} {len(st2)})")
    return Outcome([Judgment(xi, seq(*st1[k1:]), seq(*st2[k2:]), goal.post),
                    Judgment(goal.pre, seq(*st1[:k1]), seq(*st2[:k2]), xi)])


def _skip(goal, step, ctx) -> Outcome:
    if not goal.closed_programs:
        raise RuleMismatch("Skip: both programs must be skip")
    return Outcome(sides=[entail_side(ctx, goal.post, goal.pre, "post below pre")])


def _conseq(goal, step, ctx) -> Outcome:
    A = _assn(ctx, step.args["pre"], "pre", "Conseq") if step.args.get("pre") is not None else goal.pre
    B = _assn(ctx, step.args["post"], "post", "Conseq") if step.args.get("post") is not None else goal.post
    out = Outcome()
    if A is not goal.pre:
        out.sides.append(entail_side(ctx, A, goal.pre, "new pre below goal pre"))
    if B is not goal.post:
        out.sides.append(entail_side(ctx, goal.post, B, "goal post below new post"))
    out.subgoals.append(goal.replace(pre=A, post=B))
    return out


def _nmod(goal, step, ctx) -> Outcome:
    x = step.args.get("var")
    if not isinstance(x, str) or x is True:
        raise MissingWitness("NMod needs `var x`")
    if x not in ctx.decls.cvars:
        raise RuleMismatch(f"NMod: unknown variable {x}")
    mod = mod_vars(goal.c1) | mod_vars(goal.c2)
    out = Outcome()
    out.sides.append(SideCondition("mod", f"{x} is not modified", x not in mod, detail={"modified": sorted(mod)}))
    lo, hi = ctx.decls.domain(x)
    for v in range(lo, hi + 1):
        out.subgoals.append(goal.replace(pre=Guard(BinOp("==", ctx.reader.expr(x), Num(v)), goal.pre),
                                         post=subst_assertion(goal.post, x, v)))
    return out


def _split_wp(goal, step, ctx) -> Outcome:
    left, right = step.args.get("left"), step.args.get("right")
    out = Outcome()
    if left is not None or right is not None:
        A1 = _assn(ctx, left, "left", "SplitWP")
        A2 = _assn(ctx, right, "right", "SplitWP")
        out.sides.append(entail_side(ctx, goal.post, Split(A1, A2), "post below the split assertion"))
    else:
        Q = goal.post
        while hasattr(Q, "name") and hasattr(Q, "body") and not isinstance(Q, Split):
            Q = Q.body
        if not isinstance(Q, Split):
            raise RuleMismatch("SplitWP: post is not a split assertion; give `left` and `right`")
        A1, A2 = Q.left, Q.right
    w1, s1 = _wp_joint(ctx, goal.c1, A1, "wp1")
    w2, s2 = _wp_joint(ctx, goal.c2, A2, "wp2")
    out.sides += [s1, s2]
    for k, c in ((1, goal.c1), (2, goal.c2)):
        side, assumption = ast_evidence(ctx, k, c, step, f"side {k}")
        out.sides.append(side)
        if assumption:
            out.assumptions.append(assumption)
    out.sides.append(entail_side(ctx, Add((w1, w2)), goal.pre, "wp1 + wp2 below pre"))
    return out


def _duality(goal, step, ctx) -> Outcome:
    fam = step.args.get("family")
    if not isinstance(fam, list) or not fam:
        raise MissingWitness("Unbounded-Duality needs `family ((n A1 A2) ...)`")
    out = Outcome()
    for k, c in ((1, goal.c1), (2, goal.c2)):
        side, assumption = ast_evidence(ctx, k, c, step, f"side {k}")
        out.sides.append(side)
        if assumption:
            out.assumptions.append(assumption)
    for item in fam:
        if not isinstance(item, list) or len(item) != 3:
            raise MissingWitness("family members are (n A1 A2)")
        n = ctx.reader.number(item[0])
        A1, A2 = ctx.reader.assertion(item[1]), ctx.reader.assertion(item[2])
        S = Split(A1, A2)
        out.sides.append(entail_side(ctx, S, Add((goal.post, const(n))), f"member n={n:g} lies below post + n"))
        out.subgoals.append(goal.replace(pre=Add((goal.pre, const(n))), post=S))
    out.assumptions.append(f"the {len(fam)}-member dual family attains the optimal coupling value")
    return out


def _trunc_limit(goal, step, ctx) -> Outcome:
    levels = step.args.get("levels")
    if not isinstance(levels, list) or not levels:
        raise MissingWitness("TruncLimit needs `levels (n ...)`")
    out = Outcome()
    for n in levels:
        out.subgoals.append(goal.replace(post=Trunc(goal.post, ctx.reader.number(n))))
    out.assumptions.append(f"limit of the truncations at levels {[str(n) for n in levels]} taken as the post")
    return out


def _oracle(goal, step, ctx) -> Outcome:
    from .oracle import random_probes, validity_oracle
    probes = list(ctx.probes) if goal_is_top(goal, ctx) else []
    count = int(step.args.get("probes", ctx.opts.probes))
    probes += random_probes(goal, ctx, count)
    rep = validity_oracle(goal, probes, ctx)
    worst = max((r.min_post - r.pre for r in rep.rows if np.isfinite(r.min_post) and np.isfinite(r.pre)),
                default=0.0)
    side = SideCondition("oracle", f"semantic check on {len(rep.rows)} probes", rep.passed, ctx.opts.oracle_tol,
                         -worst, {"status": rep.status})
    residual = max((r.residual for r in rep.rows), default=0.0)
    return Outcome(sides=[side], evidence=[{"kind": "oracle", "status": rep.status, "probes": len(rep.rows),
                                            "maxResidual": residual}])


def goal_is_top(goal: Judgment, ctx) -> bool:
    return goal.c1 == ctx.prog1.body and goal.c2 == ctx.prog2.body


RULE_TABLE = {
    "Skip": _skip, "Assign": _assign2, "If": _if2, "While": _while2, "Seq": _seq,
    "Sample": _coupling, "Measure": _coupling, "Measure-Sample": _coupling, "Sample-Supp": _sample_supp,
    "Conseq": _conseq, "NMod": _nmod, "SplitWP": _split_wp, "Unbounded-Duality": _duality,
    "TruncLimit": _trunc_limit, "SemanticOracle": _oracle,
}


def apply_rule(goal: Judgment, step, ctx) -> Outcome:
    """Apply one script step backward to goal."""
    r = step.rule
    if r in RULE_TABLE:
        return RULE_TABLE[r](goal, step, ctx)
    if r in ("wp-L", "wp-R"):
        return _wp_one(goal, step, ctx, 1 if r == "wp-L" else 2)
    if r.endswith(("-L", "-R")):
        k = 1 if r.endswith("-L") else 2
        base = r[:-2]
        if base == "If":
            return _if_one(goal, step, ctx, k)
        if base == "While":
            return _while_one(goal, step, ctx, k)
        return _one_sided(goal, step, ctx, k)
    raise RuleMismatch(f"unknown rule {r}")
