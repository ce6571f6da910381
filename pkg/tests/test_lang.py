import glob
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqverify.cqstate import CqState, Env
from cqverify.errors import CqSyntaxError, CqTypeError, DuplicateDecl, UnboundVariable
from cqverify.examples import CORPUS_DIR
from cqverify.lang import (Assign, Sample, Seq, Skip, While, check_program, eval_bexpr, eval_expr,
                           mod_vars, parse, parse_command, parse_expr, pretty_module, typecheck)
from cqverify.semantics import SemOpts, denote

import gen

seeds = st.integers(0, 2 ** 32 - 1)


def test_parse_skip():
    m = parse("prog p { skip; }")
    assert isinstance(m.progs["p"], Skip)


def test_parse_walk_shape():
    m = parse(open(os.path.join(CORPUS_DIR, "walk.cq")).read())
    w = m.progs["walk"]
    assert isinstance(w, While)
    assert isinstance(w.body, Seq)
    assert isinstance(w.body.cmds[0], Sample) and isinstance(w.body.cmds[1], Assign)
    check_program(w, m.decls)


@pytest.mark.parametrize("text", ["prog p { x := y + }", "prog p { skip }", "prog { skip; }",
                                  "var x : int[0..; prog p { skip; }"])
def test_syntax_errors_carry_position(text):
    with pytest.raises(CqSyntaxError) as exc:
        parse(text)
    assert exc.value.line >= 1


def test_parse_command_syntax_error():
    with pytest.raises(CqSyntaxError):
        parse_command("x := y +")


def test_duplicate_declaration():
    with pytest.raises(DuplicateDecl):
        parse("var x : bool; var x : bool; prog p { skip; }")


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CORPUS_DIR, "*.cq"))))
def test_round_trip_on_corpus(path):
    m = parse(open(path).read())
    m2 = parse(pretty_module(m))
    assert m.progs == m2.progs
    assert pretty_module(m2) == pretty_module(m)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_round_trip_on_random_programs(seed):
    m = parse(gen.rand_program_text(np.random.default_rng(seed)))
    assert parse(pretty_module(m)).progs == m.progs


def test_typecheck_errors():
    base = "var x : bool; qvar q : qubit; qvar r : 3; meas M3 = std(3);\n"
    diags = typecheck(parse(base + "prog p { x <- measure M3 q; }").progs["p"], parse(base + "prog p { skip; }").decls)
    assert diags
    with pytest.raises(CqTypeError):
        m = parse(base + "prog p { x := 5; }")
        check_program(m.progs["p"], m.decls)
    with pytest.raises(CqTypeError):
        m = parse("var x : bool; qvar q : qubit; prog p { q, q *= CNOT; }")
        check_program(m.progs["p"], m.decls)
    with pytest.raises(CqTypeError):
        m = parse("var x : bool; prog p { y := 1; }")
        check_program(m.progs["p"], m.decls)


def test_bad_distribution_and_measurement():
    with pytest.raises((CqTypeError, ValueError)):
        m = parse("var x : bool; dist mu = {0: 0.5, 1: 0.4}; prog p { x <$ mu; }")
        check_program(m.progs["p"], m.decls)
    with pytest.raises((CqTypeError, ValueError)):
        m = parse("var x : bool; qvar q : qubit; meas M = {0: P0}; prog p { x <- measure M q; }")
        check_program(m.progs["p"], m.decls)


def test_eval_examples():
    assert eval_expr(parse_expr("2 * b - 1"), Env(b=0)) == -1
    assert eval_bexpr(parse_expr("x >= 0"), Env(x=0)) is True
    with pytest.raises(UnboundVariable):
        eval_expr(parse_expr("x"), Env(y=1))


def test_integer_arithmetic_is_exact():
    env = Env(a=-7, b=2)
    assert eval_expr(parse_expr("a / b"), env) == -4
    assert eval_expr(parse_expr("a % b"), env) == 1
    assert eval_bexpr(parse_expr("(a < b && !(b == 3)) <-> (b > 0)"), env)
    assert eval_bexpr(parse_expr("a > 0 -> b == 5"), env)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_mod_vars_match_semantics(seed):
    """Variables outside Mod(c) never change value under the semantics."""
    rng = np.random.default_rng(seed)
    p = gen.rand_program(rng)
    space = p.decls.space(["q", "r"])
    mods = mod_vars(p.body)
    changed = set()
    for _ in range(4):
        env = {"x": int(rng.integers(0, 4)), "y": int(rng.integers(0, 4))}
        out = denote(p.body, CqState.simple(Env(env), gen.rand_psd(rng, 4)), SemOpts(), p.decls, space).output
        for e in out.envs():
            changed |= {v for v in env if e[v] != env[v]}
    assert changed <= mods
