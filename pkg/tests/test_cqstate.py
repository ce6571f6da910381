import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.assertions import Op, Split, LabOp, assertion_expectation, cls, guard, zero
from cqverify.cqstate import (CqState, Env, JointCqState, expectation, is_coupling, joint_tr,
                              product_state, restrict, state_distance, tv_distance)
from cqverify.errors import DimMismatch, NotPSD, UnboundVariable
from cqverify.lang.ast import eval_bexpr
from cqverify.lang.decls import Decls, Space
from cqverify.lang.parser import parse_expr
from cqverify.opalg import IVPredicate

import gen

seeds = st.integers(0, 2 ** 32 - 1)
P0, P1 = np.diag([1.0, 0]).astype(complex), np.diag([0, 1.0]).astype(complex)


def test_env_is_hashable_mapping():
    e = Env(x=1, y=2)
    assert e == Env({"y": 2, "x": 1}) and hash(e) == hash(Env(y=2, x=1))
    assert e.set("x", 3)["x"] == 3 and e["x"] == 1
    assert dict(e.restrict(["x"])) == {"x": 1}


def test_state_validation():
    with pytest.raises(DimMismatch):
        CqState(2, {Env(x=0): np.eye(3)})
    with pytest.raises(NotPSD):
        CqState(2, {Env(x=0): -P0}, check=True)
    with pytest.raises(ValueError):
        CqState(2, {Env(x=0): np.eye(2)}, check=True)
    s = CqState(2, {Env(x=0): P0 * 1e-14, Env(x=1): 0.5 * P0})
    assert len(s) == 1 and s.pruned == pytest.approx(1e-14)


def test_expectation_examples():
    simple = CqState.simple(Env(x=0), P0)
    assert expectation(simple, lambda e: IVPredicate.identity(2)) == pytest.approx(1.0)
    half = CqState(2, {Env(x=0): 0.25 * P0, Env(x=1): 0.25 * P1})
    assert expectation(half, lambda e: IVPredicate.identity(2)) == pytest.approx(0.5)
    decls = Decls(cvars={"x": (0, 3)})
    space = Space()
    phi = guard(parse_expr("x == 1"), zero())
    assert assertion_expectation(CqState.simple(Env(x=0), np.eye(1)), phi, space) == np.inf
    assert assertion_expectation(CqState.simple(Env(x=1), np.eye(1)), phi, space) == 0
    with pytest.raises(UnboundVariable):
        assertion_expectation(CqState.simple(Env(y=1), np.eye(1)), cls(parse_expr("x == 1")), space)
    assert decls.domain("x") == (0, 3)


def test_restrict_examples():
    d = CqState(2, {Env(x=0): 0.5 * P0, Env(x=1): 0.5 * P1})
    assert state_distance(restrict(d, lambda e: True), d) == 0
    assert restrict(d, lambda e: False).trace() == 0
    b = parse_expr("x == 0")
    r = restrict(d, lambda e: eval_bexpr(b, e))
    assert r.envs() == [Env(x=0)] and np.allclose(r[Env(x=0)], 0.5 * P0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_restrict_partition(seed):
    rng = np.random.default_rng(seed)
    d = gen.rand_state(rng, gen.all_envs_xy(), 2)
    b = parse_expr(str(rng.choice(["x == y", "x < 2", "y != 0"])))
    t = restrict(d, lambda e: eval_bexpr(b, e))
    f = restrict(d, lambda e: not eval_bexpr(b, e))
    assert state_distance(t + f, d) == 0


def test_joint_tr_examples():
    rng = np.random.default_rng(0)
    rho = gen.rand_psd(rng, 4)
    J = JointCqState.simple({"a": 1}, {"b": 0}, rho, (2, 2))
    m1 = joint_tr(J, 2)
    assert m1.envs() == [Env(a=1)]
    assert np.allclose(m1[Env(a=1)], rho.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3))
    d1 = gen.rand_state(rng, [{"a": i} for i in range(3)], 2)
    d2 = gen.rand_state(rng, [{"b": i} for i in range(3)], 3, trace=0.8)
    P = product_state(d1, d2)
    assert state_distance(joint_tr(P, 1), d2) <= 1e-12
    J2 = JointCqState.simple({"a": 0}, {"b": 1}, gen.rand_psd(rng, 4), (2, 2))
    S = J + J2
    assert state_distance(joint_tr(S, 2), joint_tr(J, 2) + joint_tr(J2, 2)) <= 1e-12


def test_joint_rejects_overlapping_sides():
    with pytest.raises(ValueError):
        JointCqState((2, 2), {"x"}, {"x"}, {})


def test_is_coupling_examples():
    rng = np.random.default_rng(3)
    d1 = gen.rand_state(rng, [{"a": i} for i in range(2)], 2)
    d2 = gen.rand_state(rng, [{"b": i} for i in range(2)], 2)
    assert is_coupling(product_state(d1, d2), d1, d2)
    bell = np.zeros(4, dtype=complex)
    bell[[0, 3]] = 1 / np.sqrt(2)
    B = JointCqState.simple({}, {}, np.outer(bell, bell), (2, 2))
    half = CqState.simple(Env(), np.eye(2) / 2)
    assert is_coupling(B, half, half)
    Z = JointCqState.simple({}, {}, np.diag([1.0, 0, 0, 0]), (2, 2))
    assert not is_coupling(Z, CqState.simple(Env(), P0), CqState.simple(Env(), P1))
    with pytest.raises(DimMismatch):
        is_coupling(Z, CqState.simple(Env(), np.eye(3) / 3), half)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_convex_combination_of_couplings(seed):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(3):
        d1 = gen.rand_state(rng, [{"a": i} for i in range(2)], 2)
        d2 = gen.rand_state(rng, [{"b": i} for i in range(2)], 2)
        pairs.append((d1, d2, product_state(d1, d2, {"a"}, {"b"})))
    w = rng.dirichlet(np.ones(3))
    D1 = sum((p[0].scale(wi) for p, wi in zip(pairs[1:], w[1:])), pairs[0][0].scale(w[0]))
    D2 = sum((p[1].scale(wi) for p, wi in zip(pairs[1:], w[1:])), pairs[0][1].scale(w[0]))
    J = pairs[0][2].scale(w[0])
    for p, wi in zip(pairs[1:], w[1:]):
        J = J + p[2].scale(wi)
    assert is_coupling(J, D1, D2, 1e-9)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_split_expectation_is_coupling_independent(seed):
    rng = np.random.default_rng(seed)
    d1 = gen.rand_state(rng, [{"a": i} for i in range(2)], 2)
    d2 = gen.rand_state(rng, [{"b": i} for i in range(2)], 2)
    phi1 = Op(LabOp(gen.rand_psd(rng, 2), ("p",)))
    phi2 = Op(LabOp(gen.rand_psd(rng, 2), ("q",)))
    sp1, sp2 = Space(("p",), (2,)), Space(("q",), (2,))
    joint_space = sp1.concat(sp2)
    expected = assertion_expectation(d1, phi1, sp1) + assertion_expectation(d2, phi2, sp2)
    # product coupling and a classically correlated one (mixed with the product)
    prod = product_state(d1, d2, {"a"}, {"b"})
    t = float(rng.uniform())
    for J in (prod, _mix_with_diag_coupling(rng, d1, d2, prod, t)):
        assert is_coupling(J, d1, d2, 1e-8)
        assert assertion_expectation(J, Split(phi1, phi2), joint_space) == pytest.approx(expected, abs=1e-8)


def _mix_with_diag_coupling(rng, d1, d2, prod, t):
    """A second coupling: the product coupling with its off-diagonal env blocks reweighted."""
    from cqverify.transport import TransportInstance, primal_solve
    blocks = {(e1, e2): gen.rand_psd(rng, 4) for e1 in d1.envs() for e2 in d2.envs()}
    res = primal_solve(TransportInstance.from_blocks(d1, d2, blocks), tol=1e-8)
    ents = {e: (1 - t) * prod[e] + t * res.coupling[e] for e in set(prod.entries) | set(res.coupling.entries)}
    return JointCqState((2, 2), {"a"}, {"b"}, ents)


def test_tv_distance_and_json_round_trip():
    a = CqState(2, {Env(x=0): 0.5 * P0, Env(x=1): 0.5 * P1})
    b = CqState(2, {Env(x=0): 0.25 * P0, Env(x=1): 0.75 * P1})
    assert tv_distance(a, b) == pytest.approx(0.25)
    c = CqState.from_json(a.to_json())
    assert state_distance(a, c) == 0
