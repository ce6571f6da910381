import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.cqstate import CqState, Env, state_distance
from cqverify.errors import DomainOverflow
from cqverify.examples import CORPUS_DIR
from cqverify.lang import parse
from cqverify.semantics import (SemOpts, check_hast, denote, denote_truncated, eval_distribution,
                                eval_measurement, probe_states, run_simple)

import gen

seeds = st.integers(0, 2 ** 32 - 1)
P0, P1 = np.diag([1.0, 0]).astype(complex), np.diag([0, 1.0]).astype(complex)
PLUS = np.full((2, 2), 0.5, dtype=complex)
DECL = "var x : bool; var n : int[0..3]; qvar q : qubit; meas M01 = std(2); dist c = bern(1/2);\n"


def prog(body: str, name: str = "p"):
    return parse(DECL + f"prog {name} {{ {body} }}").program(name)


def rejection():
    return parse(open(os.path.join(CORPUS_DIR, "rejection.cq")).read()).program("rejection")


def test_abort_gives_zero():
    rep = run_simple(prog("abort;"), {"x": 0, "n": 0})
    assert rep.output.trace() == 0


def test_measure_plus_halves():
    rep = run_simple(prog("q := ket(plus); x <- measure M01 q;"), {"x": 0, "n": 0})
    out = rep.output
    assert out.trace() == pytest.approx(1.0)
    assert np.allclose(out[Env(x=0, n=0)], 0.5 * P0) and np.allclose(out[Env(x=1, n=0)], 0.5 * P1)


def test_rejection_residual_after_twenty_iterations():
    p = rejection()
    opts = SemOpts(loop_max_iters=20, linearize=False, prune_tol=1e-30)
    rep = denote(p, CqState.simple(Env(x1=0), P0), opts)
    assert rep.residual_trace == pytest.approx(2.0 ** -20, rel=1e-9)
    assert rep.output.trace() == pytest.approx(1 - 2.0 ** -20, rel=1e-12)


def test_denote_truncated_examples():
    p = prog("while x == 0 { x <$ c; }")
    space = p.space
    # n = 0 on states where the guard is false everywhere returns the input
    d_false = CqState.simple(Env(x=1, n=0), PLUS)
    assert state_distance(denote_truncated(p.body.cond, p.body.body, 0, d_false, p.decls, space), d_false) == 0
    d_true = CqState.simple(Env(x=0, n=0), PLUS)
    assert denote_truncated(p.body.cond, p.body.body, 0, d_true, p.decls, space).trace() == 0
    r = rejection()
    d = CqState.simple(Env(x1=0), P0)
    out = denote_truncated(r.body.cond, r.body.body, 3, d, r.decls, r.space)
    assert out.trace() == pytest.approx(7 / 8)


def test_eval_measurement_and_distribution():
    out = eval_measurement({0: P0, 1: P1}, PLUS)
    assert np.allclose(out[0], 0.5 * P0) and np.allclose(out[1], 0.5 * P1)
    rho = gen.rand_psd(np.random.default_rng(0), 2)
    dist = eval_distribution({0: 0.25, 1: 0.75}, rho)
    assert np.allclose(dist[0] + dist[1], rho) and np.allclose(dist[1], 0.75 * rho)


def test_check_hast_examples():
    probes = [CqState.simple(Env(x=0, n=0), P0)]
    assert check_hast(prog("while false { skip; }"), probes).status == "Pass"
    short = SemOpts(loop_max_iters=50, linearize=False)
    assert check_hast(prog("while true { skip; }"), probes, short).status == "Inconclusive"
    r = rejection()
    v = check_hast(r, probe_states(r), SemOpts(loop_max_iters=60, linearize=False, prune_tol=1e-30))
    assert v.status == "Pass" and v.max_residual <= 1e-10


def test_domain_overflow():
    p = prog("n := n + 1;")
    with pytest.raises(DomainOverflow):
        run_simple(p, {"x": 0, "n": 3})
    rep = run_simple(p, {"x": 0, "n": 3}, opts=SemOpts(on_overflow="abort"))
    assert rep.output.trace() == 0 and rep.domain_errors


def test_linearized_loop_agrees_with_iteration():
    r = rejection()
    d = CqState.simple(Env(x1=0), gen.rand_psd(np.random.default_rng(1), 2))
    fast = denote(r, d, SemOpts(loop_max_iters=2000, prune_tol=1e-30)).output
    slow = denote(r, d, SemOpts(loop_max_iters=2000, linearize=False, prune_tol=1e-30)).output
    assert state_distance(fast, slow) <= 1e-9
    assert fast.trace() == pytest.approx(d.trace(), abs=1e-9)


def test_loop_solve_rejected_for_oscillating_loop():
    """A loop that never exits must not be 'solved' into a spurious output."""
    p = prog("while true { q *= X; }")
    rep = denote(p, CqState.simple(Env(x=0, n=0), P0), SemOpts(loop_max_iters=500))
    assert rep.output.trace() <= 1e-12
    assert rep.residual_trace == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_loop_solve_matches_plain_iteration(seed):
    rng = np.random.default_rng(seed)
    m = gen.loop_module(rng)
    w = m.program("w")
    delta = gen.rand_state(rng, gen.all_envs_xy(), w.qdim)
    a = denote(w, delta, SemOpts(loop_max_iters=3000, on_overflow="abort")).output
    b = denote(w, delta, SemOpts(loop_max_iters=3000, on_overflow="abort", linearize=False)).output
    assert state_distance(a, b) <= 1e-7


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_trace_nonincreasing_and_linear_on_loop_free_programs(seed):
    rng = np.random.default_rng(seed)
    p = gen.rand_program(rng)
    envs = gen.all_envs_xy()
    d1, d2 = gen.rand_state(rng, envs, 4), gen.rand_state(rng, envs, 4)
    a, b = rng.uniform(0, 2, size=2)
    opts, space = SemOpts(on_overflow="abort"), p.decls.space(["q", "r"])
    o1, o2 = (denote(p, d, opts, space=space).output for d in (d1, d2))
    mix = denote(p, d1.scale(a) + d2.scale(b), opts, space=space).output
    assert o1.trace() <= d1.trace() + 1e-10
    assert state_distance(mix, o1.scale(a) + o2.scale(b)) <= 1e-9

