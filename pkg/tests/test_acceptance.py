"""Acceptance criteria, one test per criterion, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import time

import numpy as np

from cqverify.cqstate import CqState, Env, expectation, is_coupling, joint_tr, product_state
from cqverify.examples import (bernoulli_facts, corpus_path, deferred_facts, qubit_flip_facts,
                               rejection_facts, walk_facts)
from cqverify.opalg import IVPredicate, ivp_expect, ivp_trunc, loewner_leq, trace_norm
from cqverify.prover import (VERIFIED, ASSUMED, CheckOpts, build_context, check_proof, load_script,
                             validity_oracle)
from cqverify.semantics import SemOpts, denote, denote_truncated
from cqverify.transport import (DualCandidate, classical_ot, coupling_expectation, dual_check,
                                norm_bound, norm_bound_check, primal_solve, solve_ivp)
from cqverify.wp import wp_identity_check

import gen


def _script(name):
    return load_script(corpus_path(name))


# ---------------------------------------------------------------------------
# 1. walk


def test_01_walk(record):
    t = time.time()
    facts = walk_facts(start=2, budget=40)
    rep = check_proof(_script("walk.prf"), CheckOpts())
    secs = time.time() - t
    ok = facts["tv"] <= 1e-9 and rep.verdict == VERIFIED and secs < 5
    record(1, "walk equivalence", ok, f"TV {facts['tv']:.2e}, script {rep.verdict}, {secs:.2f} s")
    assert facts["tv"] <= 1e-9
    assert rep.verdict == VERIFIED
    assert secs < 5


# ---------------------------------------------------------------------------
# 2. deferred measurement


def test_02_deferred(record):
    t = time.time()
    facts = deferred_facts(("X", "H"))
    statuses = []
    for name in ("deferred_X.prf", "deferred_H.prf"):
        ctx, goal = build_context(_script(name), CheckOpts())
        assert len(ctx.probes) == 4
        statuses.append(validity_oracle(goal, ctx.probes, ctx).status)
    secs = time.time() - t
    ok = facts["maxDiff"] <= 1e-12 and statuses == ["Pass", "Pass"] and secs < 2
    record(2, "deferred measurement", ok, f"max law diff {facts['maxDiff']:.1e}, oracle {statuses}, {secs:.2f} s")
    assert facts["maxDiff"] <= 1e-12
    assert statuses == ["Pass", "Pass"]
    assert secs < 2


# ---------------------------------------------------------------------------
# 3. rejection sampling


def test_03_rejection(record):
    facts = rejection_facts(tuple(range(1, 41)))
    res_err = max(abs(r["residual"] - 2.0 ** -r["budget"]) for r in facts["rows"])
    q_ok = all(r["quantumError"] <= 2.0 ** -r["budget"] + 1e-12 for r in facts["rows"])
    ok = res_err <= 1e-12 and q_ok
    record(3, "rejection sampling", ok, f"max |residual - 2^-n| {res_err:.1e}, quantum part within 2^-n: {q_ok}")
    assert res_err <= 1e-12
    assert q_ok


# ---------------------------------------------------------------------------
# 4. qubit flipping


def test_04_qubit_flip(record):
    ctx, goal = build_context(_script("qubit_flip.prf"), CheckOpts())
    probes = [p for p in ctx.probes if p.env1["b1"] == p.env2["b2"]]
    rep = validity_oracle(goal, probes, ctx)
    pres = [r.pre for r in rep.rows]
    posts = [r.min_post for r in rep.rows]
    facts = qubit_flip_facts()
    ok = all(p == 0.5 for p in pres) and max(posts) <= 0.5 + 1e-6 and facts["maxDiff"] <= 1e-9
    record(4, "qubit flipping", ok, f"pre {pres}, max min-post {max(posts):.9f}, law diff {facts['maxDiff']:.1e}")
    assert len(probes) >= 2
    assert all(p == 0.5 for p in pres)
    assert max(posts) <= 0.5 + 1e-6
    assert facts["maxDiff"] <= 1e-9


# ---------------------------------------------------------------------------
# 5. Bernoulli


def test_05_bernoulli(record):
    facts = bernoulli_facts()
    p1, p2 = facts["law1"][1], facts["law2"][1]
    oracle = []
    for name in ("bernoulli.prf", "bernoulli_oracle.prf"):
        ctx, goal = build_context(_script(name), CheckOpts())
        oracle.append(validity_oracle(goal, ctx.probes, ctx).status)
    rep = check_proof(_script("bernoulli.prf"), CheckOpts())
    split_steps = [s for s in rep.steps if s.rule == "SplitWP"]
    closing = bool(split_steps) and all(s.status == "ok" and all(c.ok for c in s.sides) for s in split_steps)
    ok = (abs(p1 - 0.25) <= 1e-12 and abs(p2 - 0.25) <= 1e-12 and oracle == ["Pass", "Pass"] and closing
          and rep.verdict in (VERIFIED, ASSUMED))
    record(5, "Bernoulli", ok, f"P(x1=1) {p1:.15f}, P(x2=1) {p2:.15f}, oracle {oracle}, "
                               f"{len(split_steps)} closing inequalities ok: {closing}")
    assert abs(p1 - 0.25) <= 1e-12 and abs(p2 - 0.25) <= 1e-12
    assert oracle == ["Pass", "Pass"]
    assert len(split_steps) == 5 and closing
    assert rep.verdict in (VERIFIED, ASSUMED)


# ---------------------------------------------------------------------------
# 6. wp identity


def test_06_wp_identity(record):
    rng = np.random.default_rng(6)
    t = time.time()
    worst, fails = 0.0, 0
    for _ in range(200):
        p = gen.rand_program(rng, max_stmts=6)
        phi = gen.rand_bounded_assertion(rng)
        space = p.decls.space(["q", "r"])
        delta = gen.rand_state(rng, gen.all_envs_xy(), space.dim)
        ok, lhs, rhs = wp_identity_check(p.body, phi, delta, space, p.decls, tol=1e-7)
        worst = max(worst, abs(lhs - rhs))
        fails += not ok
    secs = time.time() - t
    record(6, "wp identity", fails == 0 and secs < 30, f"200 programs, max |LHS-RHS| {worst:.1e}, {secs:.1f} s")
    assert fails == 0
    assert secs < 30


# ---------------------------------------------------------------------------
# 7. weak duality


def _feasible_random_dual(rng, inst):
    """Random Hermitian psi1, psi2 shifted down until feasible; an independent dual candidate."""
    d1, d2 = inst.dims
    p1 = {e: gen.rand_herm(rng, d1) for e in inst.delta1.envs()}
    p2 = {e: gen.rand_herm(rng, d2) for e in inst.delta2.envs()}
    worst = 0.0
    for e1, A in p1.items():
        for e2, B in p2.items():
            M = inst.phi(e1, e2).finite - np.kron(A, np.eye(d2)) - np.kron(np.eye(d1), B)
            worst = min(worst, float(np.linalg.eigvalsh(M)[0]))
    shift = worst - 1e-9
    return DualCandidate({e: A + shift * np.eye(d1) for e, A in p1.items()}, p2)


def test_07_weak_duality(record):
    rng = np.random.default_rng(7)
    worst = -np.inf
    for _ in range(50):
        inst = gen.rand_instance(rng)
        res = primal_solve(inst, tol=1e-6)
        assert is_coupling(res.coupling, inst.delta1, inst.delta2, 1e-7)
        primal = coupling_expectation(inst, res.coupling)
        d1, d2 = inst.dims
        phi_norm = max(np.linalg.norm(inst.phi(a, b).finite, 2) for a in inst.delta1.envs()
                       for b in inst.delta2.envs())
        canonical = DualCandidate({e: -phi_norm * np.eye(d1) for e in inst.delta1.envs()},
                                  {e: np.zeros((d2, d2)) for e in inst.delta2.envs()})
        for cand in (res.dual, canonical, _feasible_random_dual(rng, inst)):
            feasible, value = dual_check(inst, cand, tol=1e-7)
            assert feasible
            worst = max(worst, value - primal)
    ok = worst <= 1e-5
    record(7, "weak duality", ok, f"50 instances x 3 dual candidates, max dual - primal {worst:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 8. finite strong duality


def _classical_embedding(inst):
    d1, d2 = inst.dims
    e1s, e2s = list(inst.delta1.envs()), list(inst.delta2.envs())
    mu1 = [inst.delta1[e][k, k].real for e in e1s for k in range(d1)]
    mu2 = [inst.delta2[e][k, k].real for e in e2s for k in range(d2)]
    C = np.array([[inst.phi(a, b).finite[k * d2 + l, k * d2 + l].real for b in e2s for l in range(d2)]
                  for a in e1s for k in range(d1)])
    return mu1, mu2, C


def test_08_strong_duality(record):
    rng = np.random.default_rng(8)
    t = time.time()
    diag_err = 0.0
    for _ in range(20):
        inst = gen.rand_instance(rng, diagonal=True)
        res = primal_solve(inst, tol=1e-9)
        ot = classical_ot(*_classical_embedding(inst))[0]
        diag_err = max(diag_err, abs(res.primal_value - ot), abs(res.dual_value - ot))
    gaps = []
    for _ in range(20):
        inst = gen.rand_instance(rng, d1=2, d2=2)
        res = primal_solve(inst, tol=1e-4)
        assert res.certified
        feasible, value = dual_check(inst, res.dual, tol=1e-9)
        assert feasible and abs(value - res.dual_value) <= 1e-9
        gaps.append(coupling_expectation(inst, res.coupling) - value)
    secs = time.time() - t
    ok = diag_err <= 1e-8 and max(gaps) <= 1e-4 and secs < 60
    record(8, "finite strong duality", ok,
           f"diagonal max |primal/dual - LP| {diag_err:.1e}, quantum max gap {max(gaps):.1e}, {secs:.1f} s")
    assert diag_err <= 1e-8
    assert max(gaps) <= 1e-4
    assert secs < 60


# ---------------------------------------------------------------------------
# 9. norm bound


def test_09_norm_bound(record):
    rng = np.random.default_rng(9)
    count, worst_ratio = 0, 0.0
    for eps in (1e-2, 1e-4, 1e-6):
        for _ in range(10):
            inst = gen.rand_instance(rng, diagonal=bool(rng.random() < 0.3))
            res = primal_solve(inst, tol=eps)
            phi_norm = max(np.linalg.norm(inst.phi(a, b).finite, 2) for a in inst.delta1.envs()
                           for b in inst.delta2.envs())
            n1, n2 = res.dual.norms()
            worst_ratio = max(worst_ratio, max(n1, n2) / norm_bound(phi_norm, eps))
            assert norm_bound_check(inst, eps, res.dual, phi_norm)
            count += 1
    record(9, "norm bound", worst_ratio <= 1, f"{count} solver duals, max ||psi|| / bound {worst_ratio:.3g}")
    assert worst_ratio <= 1


# ---------------------------------------------------------------------------
# 10. monotone convergence and Fatou


def _monotone_instance(rng, meet: bool):
    """Random cq-state and per-env IVPs; unless `meet`, each infinite part avoids the state's block."""
    d = int(rng.integers(2, 5))
    envs = [{"x": i} for i in range(3)]
    delta = gen.rand_state(rng, envs, d)
    preds = {}
    for env, rho in list(delta.items()):
        if meet:
            preds[env] = gen.rand_ivp(rng, d, inf_rank=1)
            continue
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        v /= np.linalg.norm(v)
        delta.entries[env] = np.trace(rho).real * np.outer(v, v.conj())
        X = np.eye(d) - np.outer(v, v.conj())
        preds[env] = IVPredicate.from_parts(gen.rand_psd(rng, d, trace=float(rng.uniform(0.5, 3))), X)
    return delta, preds


def _truncated_expectations(delta, preds, ms):
    return [expectation(delta, lambda e, m=m: IVPredicate.bounded(ivp_trunc(preds[e], m), check=False))
            for m in ms]


def _fatou_instance(rng):
    """Instance with an infinite-valued cost and a known finite coupling J."""
    from cqverify.cqstate import JointCqState
    from cqverify.transport import TransportInstance
    n1, n2 = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    w = rng.dirichlet(np.ones(n1 * n2))
    blocks, J = {}, {}
    for a in range(n1):
        for b in range(n2):
            G = gen.rand_psd(rng, 4, trace=float(w[a * n2 + b]), rank=3)
            x = np.linalg.eigh(G)[1][:, 0]
            J[Env(a=a, b=b)] = G
            blocks[(Env(a=a), Env(b=b))] = IVPredicate.from_parts(gen.rand_psd(rng, 4, trace=2.0),
                                                                   np.outer(x, x.conj()))
    J = JointCqState((2, 2), {"a"}, {"b"}, J)
    return TransportInstance.from_blocks(joint_tr(J, 2), joint_tr(J, 1), blocks), J


def test_10_convergence(record):
    rng = np.random.default_rng(10)
    ms = [0.25 * 2 ** k for k in range(20)]
    mono_ok = 0
    for i in range(10):
        meet = i % 2 == 1
        delta, preds = _monotone_instance(rng, meet)
        full = expectation(delta, lambda e: preds[e])
        vals = _truncated_expectations(delta, preds, ms)
        nondecreasing = all(b >= a - 1e-6 for a, b in zip(vals, vals[1:]))
        if meet:
            converged = np.isinf(full) and all(v >= m * 1e-9 for m, v in zip(ms, vals))
        else:
            pmax = max(np.linalg.norm(p.finite, 2) for p in preds.values())
            converged = np.isfinite(full) and all(abs(v - full) <= 1e-6 for m, v in zip(ms, vals) if m > pmax)
        mono_ok += bool(nondecreasing and converged)

    fatou_ok = 0
    for _ in range(10):
        inst, J = _fatou_instance(rng)
        res = solve_ivp(inst, tol=1e-6)
        prod = product_state(inst.delta1, inst.delta2)
        good = res.coupling is not None
        for base in ([res.coupling] if good else []) + [J]:
            limit = _joint_expect(inst, base, None)
            seq = []
            for n in range(1, 1001):
                Dn = _mix(base, prod, 1.0 / n ** 3)
                seq.append(_joint_expect(inst, Dn, float(n)))
            good &= np.isfinite(limit) and limit <= min(seq[500:]) + 1e-6
        good &= is_coupling(_mix(J, prod, 0.5), inst.delta1, inst.delta2, 1e-8)
        fatou_ok += bool(good)
    ok = mono_ok == 10 and fatou_ok == 10
    record(10, "convergence suites", ok, f"monotone convergence {mono_ok}/10, Fatou {fatou_ok}/10")
    assert mono_ok == 10
    assert fatou_ok == 10


def _mix(a, b, t):
    from cqverify.cqstate import JointCqState
    ents = {e: (1 - t) * a[e] + t * b[e] for e in set(a.entries) | set(b.entries)}
    return JointCqState(a.split, a.vars1 | b.vars1, a.vars2 | b.vars2, ents)


def _joint_expect(inst, D, m):
    """E_D[phi], or E_D[trunc(phi, m)] when m is given."""
    total = 0.0
    for env, rho in D.items():
        e1 = Env({k: v for k, v in env.items() if k in D.vars1})
        e2 = Env({k: v for k, v in env.items() if k not in D.vars1})
        A = inst.phi(e1, e2)
        if m is not None:
            A = IVPredicate.bounded(ivp_trunc(A, m), check=False)
        total += ivp_expect(A, rho, check=False)
    return total


# ---------------------------------------------------------------------------
# 11. semantics laws


def _leq_state(a, b, tol=1e-9):
    return all(loewner_leq(a[e], b[e], tol) for e in set(a.entries) | set(b.entries))


def _dist(a, b):
    return max((trace_norm(a[e] - b[e]) for e in set(a.entries) | set(b.entries)), default=0.0)


def test_11_semantics_laws(record):
    rng = np.random.default_rng(11)
    counts = {"trace": 0, "linearity": 0, "fixpoint": 0, "truncation": 0}
    opts = SemOpts(on_overflow="abort")
    for _ in range(100):
        mod = gen.loop_module(rng)
        w, u = mod.program("w"), mod.program("u")
        space = w.decls.space(["q", "r"])
        envs = gen.all_envs_xy()
        d1 = gen.rand_state(rng, envs, 4)
        d2 = gen.rand_state(rng, envs, 4)
        lam = float(rng.uniform())
        rw1 = denote(w.body, d1, opts, w.decls, space)
        counts["trace"] += rw1.output.trace() <= d1.trace() + 1e-9 and rw1.residual_trace >= 0

        rw2 = denote(w.body, d2, opts, w.decls, space)
        mix = CqState(4, {e: lam * d1[e] + (1 - lam) * d2[e] for e in set(d1.entries) | set(d2.entries)})
        rmix = denote(w.body, mix, opts, w.decls, space)
        comb = CqState(4, {e: lam * rw1.output[e] + (1 - lam) * rw2.output[e]
                           for e in set(rw1.output.entries) | set(rw2.output.entries)})
        slack = rmix.residual_trace + lam * rw1.residual_trace + (1 - lam) * rw2.residual_trace
        counts["linearity"] += _dist(rmix.output, comb) <= 1e-9 + slack

        ru = denote(u.body, d1, opts, u.decls, space)
        counts["fixpoint"] += _dist(rw1.output, ru.output) <= 1e-9 + rw1.residual_trace + ru.residual_trace

        loop = w.body
        prev = denote_truncated(loop.cond, loop.body, 0, d1, w.decls, space, opts)
        mono = True
        for n in range(1, 8):
            cur = denote_truncated(loop.cond, loop.body, n, d1, w.decls, space, opts)
            mono &= _leq_state(prev, cur)
            prev = cur
        mono &= _leq_state(prev, rw1.output)
        counts["truncation"] += mono
    ok = all(v == 100 for v in counts.values())
    record(11, "semantics laws", ok, ", ".join(f"{k} {v}/100" for k, v in counts.items()))
    assert ok, counts
