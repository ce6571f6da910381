import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.assertions import (Evaluator, Infty, Ite, LabOp, Op, assertion_expectation, cls,
                                 dist_expect, entail_check, entails, eval_assertion, ident, op,
                                 parse_assertion, split_assn, subst_assertion, trunc, zero)
from cqverify.cqstate import Env
from cqverify.errors import DomainTooLarge
from cqverify.examples import CORPUS_DIR
from cqverify.lang import parse, parse_expr
from cqverify.lang.decls import Decls, Space
from cqverify.opalg import ivp_trunc, loewner_leq
from cqverify.semantics import SemOpts, denote

import gen

seeds = st.integers(0, 2 ** 32 - 1)
TWO = parse(gen.HEADER + "prog p { skip; }").program("p")
SPACE = TWO.decls.space(["q", "r"])
ENVS = [Env(e) for e in gen.all_envs_xy()]


def test_cls_values():
    sp = Space()
    b = parse_expr("x == 0")
    assert eval_assertion(cls(b), {"x": 0}, sp).is_zero
    assert eval_assertion(cls(b), {"x": 1}, sp).is_infinity
    decls = Decls(cvars={"x": (0, 3)})
    assert entails(zero(), cls(b), sp, decls)
    assert not entails(cls(b), zero(), sp, decls)


def test_dist_expect_examples():
    sp = Space()
    mu = {0: 0.5, 1: 0.5}
    A = dist_expect(mu, "b", cls(parse_expr("b == 0")))
    assert eval_assertion(A, {}, sp).is_infinity
    B = dist_expect({0: 0.75, 1: 0.25}, "x", Ite(parse_expr("x == 1"), ident(), zero()))
    val = eval_assertion(B, {}, sp)
    assert val.is_bounded and val.finite[0, 0].real == pytest.approx(0.25)


def test_split_examples():
    s1, s2 = Space(("a",), (2,)), Space(("b",), (2,))
    joint = s1.concat(s2)
    assert eval_assertion(split_assn(zero(), zero()), {}, joint).is_zero
    v = eval_assertion(split_assn(ident(), ident()), {}, joint)
    assert np.allclose(v.finite, 2 * np.eye(4))


def test_entails_reflexive_and_cap():
    rng = np.random.default_rng(0)
    A = gen.rand_bounded_assertion(rng)
    assert entails(A, A, SPACE, TWO.decls)
    with pytest.raises(DomainTooLarge):
        entail_check(A, A, SPACE, TWO.decls, cap=3, vars_=["x", "y"])


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_substitution_law(seed):
    """E over delta of A[e/x] equals E over the state after x := e of A."""
    rng = np.random.default_rng(seed)
    A = gen.rand_bounded_assertion(rng)
    x = str(rng.choice(["x", "y"]))
    e = str(rng.choice(["(x + 1) % 4", "(y + x) % 4", "3 - y", "2", "(x * y) % 4"]))
    p = parse(gen.HEADER + f"prog p {{ {x} := {e}; }}").program("p")
    delta = gen.rand_state(rng, gen.all_envs_xy(), 4)
    lhs = assertion_expectation(delta, subst_assertion(A, x, parse_expr(e)), SPACE)
    out = denote(p, delta, SemOpts(), space=SPACE).output
    assert lhs == pytest.approx(assertion_expectation(out, A, SPACE), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0, 3))
def test_entails_antisymmetric_up_to_tolerance(seed, k):
    rng = np.random.default_rng(seed)
    tol = 1e-6
    A = gen.rand_bounded_assertion(rng)
    E = gen.rand_psd(rng, 4, trace=None)
    E *= k * tol / np.linalg.norm(E, 2)
    B = A + Op(LabOp(E, ("q", "r")))
    if entails(A, B, SPACE, TWO.decls, tol, vars_=["x", "y"]) and entails(B, A, SPACE, TWO.decls, tol,
                                                                          vars_=["x", "y"]):
        ev = Evaluator(SPACE)
        for env in ENVS:
            a, b = ev(A, env), ev(B, env)
            assert np.allclose(a.inf, b.inf)
            assert np.linalg.norm(a.finite - b.finite, 2) <= 2 * tol
    else:
        assert k > 1


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(0, 2))
def test_trunc_nondecreasing_and_converging(seed, inf_rank):
    rng = np.random.default_rng(seed)
    P = gen.rand_projection(rng, 4, inf_rank) if inf_rank else np.zeros((4, 4))
    A = gen.rand_bounded_assertion(rng)
    if inf_rank:
        A = A + Infty(LabOp(P, ("q", "r")))
    ev = Evaluator(SPACE)
    for env in ENVS[::3]:
        full = ev(A, env)
        top = int(np.ceil(2 * np.linalg.norm(full.finite, 2))) + 2
        prev = None
        for m in range(top + 1):
            cur = ev(trunc(A, m), env)
            assert cur.is_bounded
            assert np.allclose(cur.finite, ivp_trunc(full, m), atol=1e-9)
            if prev is not None:
                assert loewner_leq(prev.finite, cur.finite, 1e-9)
            prev = cur
        if full.is_bounded:
            assert np.allclose(prev.finite, full.finite, atol=1e-9)


def test_qubit_flip_guard_entailment():
    """pguard over the Hadamard-conjugated equality projector, pulled back through H on q2."""
    m = parse(open(os.path.join(CORPUS_DIR, "qubit_flip.cq")).read())
    decls = m.decls
    space = decls.space(["q1", "q2"])
    pre = parse_assertion("(pguard (Peq q1 q2) (const 0.5))", decls)
    mid = parse_assertion("(conj (H q2) (pguard ({dot(kron(I2, H), Peq, kron(I2, H))} q1 q2) (const 0.5)))",
                          decls)
    assert entails(pre, mid, space, decls, vars_=["b1", "b2"])
    assert entails(mid, pre, space, decls, vars_=["b1", "b2"])


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_sexpr_round_trip(seed):
    rng = np.random.default_rng(seed)
    A = gen.rand_bounded_assertion(rng)
    B = parse_assertion(A.sexpr(), TWO.decls)
    ev1, ev2 = Evaluator(SPACE), Evaluator(SPACE)
    for env in ENVS:
        a, b = ev1(A, env), ev2(B, env)
        assert np.allclose(a.finite, b.finite, atol=1e-9) and np.allclose(a.inf, b.inf)


def test_op_on_reordered_registers():
    rng = np.random.default_rng(4)
    M1, M2 = gen.rand_psd(rng, 2), gen.rand_psd(rng, 2)
    v = eval_assertion(op(np.kron(M1, M2), ("r", "q")), {}, SPACE)
    assert np.allclose(v.finite, np.kron(M2, M1))
