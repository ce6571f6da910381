import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.cqstate import CqState, Env, is_coupling
from cqverify.errors import CapExceeded, MassMismatch
from cqverify.transport import (DualCandidate, TransportInstance, classical_ot, coupling_expectation,
                                dual_check, norm_bound, norm_bound_check, primal_solve, product_value)

import gen

seeds = st.integers(0, 2 ** 32 - 1)
P0 = np.diag([1.0, 0]).astype(complex)
SWAP = np.eye(4)[[0, 2, 1, 3]].astype(complex)
ANTI = np.eye(4) - SWAP  # I - SWAP is PSD (twice the antisymmetric projector)


def single(rho1, rho2, phi):
    d1 = CqState.simple(Env(), rho1)
    d2 = CqState.simple(Env(), rho2)
    return TransportInstance.from_blocks(d1, d2, {(Env(), Env()): phi})


def _dual(inst, c1, c2):
    d1, d2 = inst.dims
    return DualCandidate({e: c1 * np.eye(d1) for e in inst.delta1.envs()},
                         {e: c2 * np.eye(d2) for e in inst.delta2.envs()})


def test_classical_ot_examples():
    C = 1.0 - np.eye(2)
    assert classical_ot([0.5, 0.5], [0.5, 0.5], C)[0] == pytest.approx(0)
    assert classical_ot([1, 0], [0, 1], C)[0] == pytest.approx(1)
    val, plan, _, _ = classical_ot([0.75, 0.25], [0.5, 0.5], C)
    assert val == pytest.approx(0.25, abs=1e-12)
    assert np.allclose(plan.sum(1), [0.75, 0.25], atol=1e-10) and np.allclose(plan.sum(0), [0.5, 0.5])
    with pytest.raises(MassMismatch):
        classical_ot([1.0, 0], [0.5, 0.4], C)


def test_primal_examples():
    r = primal_solve(single(P0, P0, ANTI), tol=1e-6)
    assert r.primal_value == pytest.approx(0, abs=1e-6) and r.certified
    half = np.eye(2) / 2
    r = primal_solve(single(half, half, ANTI), tol=1e-6)
    assert r.primal_value == pytest.approx(0, abs=1e-6) and r.certified
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    assert np.trace(ANTI @ np.outer(bell, bell)).real == pytest.approx(0)


def test_diagonal_instance_matches_classical():
    d1 = CqState.simple(Env(), np.diag([0.75, 0.25]))
    d2 = CqState.simple(Env(), np.diag([0.5, 0.5]))
    cost = np.diag([0.0, 1.0, 1.0, 0.0])  # [i != j] on |ij>
    r = primal_solve(TransportInstance.from_blocks(d1, d2, {(Env(), Env()): cost}), tol=1e-8)
    assert r.primal_value == pytest.approx(0.25, abs=1e-6)
    assert r.primal_value == pytest.approx(classical_ot([0.75, 0.25], [0.5, 0.5], 1 - np.eye(2))[0], abs=1e-6)
    r2 = primal_solve(TransportInstance.from_blocks(d1, d2, {(Env(), Env()): cost}), tol=1e-6, force_sdp=True)
    assert r2.primal_value == pytest.approx(0.25, abs=1e-5)


def test_dual_check_examples():
    rng = np.random.default_rng(0)
    inst = gen.rand_instance(rng, 2, 2, 2, 2)
    nphi = max(np.linalg.norm(inst.phi(e1, e2).finite, 2)
               for e1 in inst.delta1.envs() for e2 in inst.delta2.envs())
    ok, val = dual_check(inst, _dual(inst, -nphi, 0.0))
    assert ok and val == pytest.approx(-nphi)
    ok, val = dual_check(inst, _dual(inst, 0.0, 0.0))
    assert ok and val == 0
    zero_eig = single(P0, P0, ANTI)
    n = np.linalg.norm(ANTI, 2)
    ok, _ = dual_check(zero_eig, _dual(zero_eig, n / 2, n / 2))
    assert not ok


def test_norm_bound_check_examples():
    rng = np.random.default_rng(1)
    inst = gen.rand_instance(rng, 2, 2, 2, 2)
    nphi = max(np.linalg.norm(inst.phi(e1, e2).finite, 2)
               for e1 in inst.delta1.envs() for e2 in inst.delta2.envs())
    for eps in (1e-1, 1.0, 2 * nphi):
        assert norm_bound_check(inst, eps, _dual(inst, -nphi, 0.0), nphi)
    eps = 1e-2
    assert not norm_bound_check(inst, eps, _dual(inst, -10 * norm_bound(nphi, eps), 0.0), nphi)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_solver_contract(seed):
    """Weak duality, product upper bound, attainment and a valid coupling on every run."""
    rng = np.random.default_rng(seed)
    inst = gen.rand_instance(rng)
    tol = 1e-5
    r = primal_solve(inst, tol=tol)
    nphi = max(np.linalg.norm(inst.phi(e1, e2).finite, 2)
               for e1 in inst.delta1.envs() for e2 in inst.delta2.envs())
    assert is_coupling(r.coupling, inst.delta1, inst.delta2, 1e-6)
    assert coupling_expectation(inst, r.coupling) == pytest.approx(r.primal_value, abs=tol)
    ok, dval = dual_check(inst, r.dual, 1e-7)
    assert ok and dval <= r.primal_value + 2 * tol
    assert r.primal_value <= product_value(inst) + tol <= nphi + 2 * tol
    assert r.gap >= -2 * tol


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_diagonal_random_matches_lp(seed):
    rng = np.random.default_rng(seed)
    inst = gen.rand_instance(rng, 1, 1, 3, 3, diagonal=True)
    (e1, rho1), = inst.delta1.items()
    (e2, rho2), = inst.delta2.items()
    cost = np.real(np.diag(inst.phi(e1, e2).finite)).reshape(3, 3)
    expected = classical_ot(np.real(np.diag(rho1)), np.real(np.diag(rho2)), cost)[0]
    assert primal_solve(inst, tol=1e-8).primal_value == pytest.approx(expected, abs=1e-6)


def test_errors():
    with pytest.raises(MassMismatch):
        primal_solve(single(P0, 0.5 * P0, ANTI))
    big = np.eye(16) / 16
    with pytest.raises(CapExceeded):
        primal_solve(single(big, big, np.eye(256)), cap=255)


def test_instance_json_round_trip():
    rng = np.random.default_rng(5)
    inst = gen.rand_instance(rng, 2, 2, 2, 2)
    back = TransportInstance.from_json(inst.to_json())
    a, b = primal_solve(inst, tol=1e-6), primal_solve(back, tol=1e-6)
    assert a.primal_value == pytest.approx(b.primal_value, abs=1e-6)
