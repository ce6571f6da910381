import glob
import os
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.cqstate import CqState, Env
from cqverify.errors import RuleMismatch
from cqverify.examples import CORPUS_DIR
from cqverify.lang import mod_vars
from cqverify.prover import (ASSUMED, FAILED, VERIFIED, Step, build_context, check_file, check_proof,
                             parse_script, random_probes, validity_oracle, apply_rule)
from cqverify.semantics import SemOpts, denote

import gen

seeds = st.integers(0, 2 ** 32 - 1)
EXPECTED = {
    "walk.prf": VERIFIED,
    "deferred_X.prf": VERIFIED,
    "deferred_H.prf": VERIFIED,
    "rejection.prf": VERIFIED,
    "qubit_flip.prf": VERIFIED,
    "bernoulli.prf": ASSUMED,
    "bernoulli_oracle.prf": VERIFIED,
}


def corpus(name: str) -> str:
    return open(os.path.join(CORPUS_DIR, name)).read()


def script(text: str):
    return parse_script(text, CORPUS_DIR)


def test_corpus_is_covered():
    assert {os.path.basename(p) for p in glob.glob(os.path.join(CORPUS_DIR, "*.prf"))} == set(EXPECTED)


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_verdicts(name):
    rep = check_file(os.path.join(CORPUS_DIR, name))
    assert rep.verdict == EXPECTED[name], rep.to_json()["failures"]
    if rep.verdict == ASSUMED:
        assert rep.assumptions


@pytest.mark.parametrize("name", sorted(n for n, v in EXPECTED.items() if v == VERIFIED))
def test_verified_scripts_pass_random_oracle(name):
    ctx, goal = build_context(script(corpus(name)))
    probes = random_probes(goal, ctx, 10, np.random.default_rng(7))
    assert len(probes) == 10
    rep = validity_oracle(goal, probes, ctx)
    assert rep.passed, [r for r in rep.rows if r.status != "Pass"]


def test_while_on_non_loop_is_rule_mismatch():
    text = corpus("qubit_flip.prf")
    text = text[:text.index("proof {")] + "proof {\n  rule While invariant (zero);\n}\n"
    ctx, goal = build_context(script(text))
    step = script(text).steps[0]
    with pytest.raises(RuleMismatch):
        apply_rule(goal, step, ctx)
    rep = check_proof(script(text))
    assert rep.verdict == FAILED and "While" in rep.steps[0].error


@pytest.mark.parametrize("witness", ["product", "(table (0 1) 0.5 (1 0) 0.5)"])
def test_wrong_witness_fails(witness):
    text = corpus("walk.prf").replace("witness diag", f"witness {witness}")
    rep = check_proof(script(text))
    assert rep.verdict == FAILED


def test_false_judgment_fails_oracle():
    text = corpus("walk.prf")
    text = re.sub(r"(?m)^pre .*;$", "pre (zero);", text, count=1)
    text = re.sub(r"(?m)^post .*;$", "post (id);", text, count=1)
    ctx, goal = build_context(script(text))
    assert not validity_oracle(goal, ctx.probes, ctx).passed


def test_nmod_side_condition():
    text = corpus("qubit_flip.prf")
    head = text[:text.index("proof {")]
    bad = check_proof(script(head + "proof {\n  rule NMod var b1;\n}\n"))
    assert bad.verdict == FAILED
    sides = [s for st in bad.steps for s in st.sides if s.kind == "mod"]
    assert sides and not sides[0].ok


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_nmod_is_semantically_honest(seed):
    """A variable outside Mod(c) keeps its input value in every output branch."""
    rng = np.random.default_rng(seed)
    p = gen.rand_program(rng)
    space = p.decls.space(["q", "r"])
    free = {"x", "y"} - mod_vars(p.body)
    for v in free:
        for val in range(4):
            env = {"x": int(rng.integers(0, 4)), "y": int(rng.integers(0, 4))}
            env[v] = val
            out = denote(p, CqState.simple(Env(env), gen.rand_psd(rng, 4)), SemOpts(on_overflow="abort"),
                         space=space).output
            assert all(e[v] == val for e in out.envs())


def _weakened(text: str, extra: str, post_scale: str) -> str:
    pre = re.search(r"(?m)^pre (.*);$", text).group(1)
    post = re.search(r"(?m)^post (.*);$", text).group(1)
    text = text.replace(f"pre {pre};", f"pre (add {pre} {extra});", 1)
    text = text.replace(f"post {post};", f"post (scale {post_scale} {post});", 1)
    return text.replace("proof {", f"proof {{\n  rule Conseq pre {pre} post {post};", 1)


@pytest.mark.parametrize("name", ["walk.prf", "qubit_flip.prf", "rejection.prf", "deferred_X.prf"])
def test_weak_conseq_keeps_verdict(name):
    text = _weakened(corpus(name), "(const 0.25)", "0.5")
    rep = check_proof(script(text))
    assert rep.verdict == VERIFIED, rep.to_json()["failures"]
    conseq = rep.steps[0]
    assert conseq.rule == "Conseq" and all(s.ok for s in conseq.sides)


def test_conseq_rejects_wrong_direction():
    text = corpus("qubit_flip.prf")
    pre = re.search(r"(?m)^pre (.*);$", text).group(1)
    text = text.replace("proof {", f"proof {{\n  rule Conseq pre (add {pre} (const 0.25));", 1)
    assert check_proof(script(text)).verdict == FAILED


def test_step_text_round_trip():
    sc = script(corpus("walk.prf"))
    assert [s.rule for s in sc.steps][:2] == ["While", "Assign"]
    assert all(isinstance(s, Step) for s in sc.steps)
