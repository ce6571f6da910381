"""Random generators shared by the test suites."""

from __future__ import annotations

import numpy as np

from cqverify.assertions import Add, Const, Ite, Op, Proj, Restrict, Scale, LabOp
from cqverify.cqstate import CqState, Env, JointCqState
from cqverify.lang.parser import parse, parse_expr
from cqverify.opalg import IVPredicate

# ---------------------------------------------------------------------------
# matrices and predicates


def rand_herm(rng, d: int, scale: float = 1.0) -> np.ndarray:
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + A.conj().T) / 2


def rand_psd(rng, d: int, trace: float | None = 1.0, rank: int | None = None) -> np.ndarray:
    r = rank or d
    G = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    P = G @ G.conj().T
    if trace is not None:
        P *= trace / np.trace(P).real
    return P


def rand_unitary(rng, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def rand_projection(rng, d: int, rank: int) -> np.ndarray:
    V = rand_unitary(rng, d)[:, :rank]
    return V @ V.conj().T


def rand_ivp(rng, d: int, inf_rank: int | None = None) -> IVPredicate:
    """Random PSD finite part plus a random infinite subspace of the given rank."""
    k = int(rng.integers(0, d)) if inf_rank is None else inf_rank
    P = rand_psd(rng, d, trace=float(rng.uniform(0.5, 3.0)))
    if k == 0:
        return IVPredicate.bounded(P)
    return IVPredicate.from_parts(P, rand_projection(rng, d, k))


def rand_state(rng, envs: list, d: int, trace: float = 1.0, min_envs: int = 1) -> CqState:
    """Random cq-state spread over a random subset of envs."""
    k = int(rng.integers(min_envs, len(envs) + 1))
    pick = rng.choice(len(envs), size=k, replace=False)
    w = rng.dirichlet(np.ones(k)) * trace
    return CqState(d, {Env(envs[i]): rand_psd(rng, d, trace=float(wi)) for i, wi in zip(pick, w)})


# ---------------------------------------------------------------------------
# loop-free programs over x, y in [0..3] and two qubits

HEADER = """
var x : int[0..3];
var y : int[0..3];
qvar q : qubit;
qvar r : qubit;
dist mu = {0: 0.1, 1: 0.2, 2: 0.3, 3: 0.4};
dist coin = uniform(0, 1);
meas M01 = std(2);
meas Mpm = {0: Pplus, 1: Pminus};
"""

_EXPRS = ["x", "y", "(x + 1) % 4", "(y + x) % 4", "3 - x", "(x * y) % 4", "2", "0"]
_CONDS = ["x == y", "x < 2", "y != 0", "x == 1 || y == 3", "!(x <= y)"]
_ONE_Q = ["H", "X", "S", "T", "Y", "Z"]
_TWO_Q = ["CNOT", "CZ", "SWAP"]


def _stmt(rng, budget: list, depth: int) -> str:
    budget[0] -= 1
    v = rng.choice(["x", "y"])
    reg = rng.choice(["q", "r"])
    kind = int(rng.integers(0, 8 if depth < 2 else 7))
    if kind == 0:
        return f"{v} := {rng.choice(_EXPRS)};"
    if kind == 1:
        return f"{v} <$ {rng.choice(['mu', 'coin'])};"
    if kind == 2:
        return f"{reg} := ket({rng.choice(['ket0', 'ket1', 'plus', 'minus'])});"
    if kind == 3:
        return f"{reg} *= {rng.choice(_ONE_Q)};"
    if kind == 4:
        a, b = ("q", "r") if rng.random() < 0.5 else ("r", "q")
        return f"{a}, {b} *= {rng.choice(_TWO_Q)};"
    if kind in (5, 6):
        return f"{v} <- measure {rng.choice(['M01', 'Mpm'])} {reg};"
    body1 = _block(rng, budget, depth + 1)
    body2 = _block(rng, budget, depth + 1)
    return f"if {rng.choice(_CONDS)} {{ {body1} }} else {{ {body2} }}"


def _block(rng, budget: list, depth: int) -> str:
    out = []
    while budget[0] > 0 and (not out or rng.random() < 0.6):
        out.append(_stmt(rng, budget, depth))
    return " ".join(out) if out else "skip;"


def rand_program_text(rng, max_stmts: int = 6) -> str:
    budget = [int(rng.integers(1, max_stmts + 1))]
    body = []
    while budget[0] > 0:
        body.append(_stmt(rng, budget, 0))
    return HEADER + "prog p { " + " ".join(body) + " }\n"


def rand_program(rng, max_stmts: int = 6):
    mod = parse(rand_program_text(rng, max_stmts))
    return mod.program("p")


# ---------------------------------------------------------------------------
# bounded assertions over x, y, q, r


def rand_bounded_assertion(rng, depth: int = 0):
    kind = int(rng.integers(0, 7 if depth < 2 else 3))
    if kind == 0:
        return Const(float(rng.uniform(0, 2)))
    if kind == 1:
        regs = [("q",), ("r",), ("q", "r"), ("r", "q")][int(rng.integers(0, 4))]
        return Op(LabOp(rand_psd(rng, 2 ** len(regs), trace=float(rng.uniform(0.5, 2))), regs))
    if kind == 2:
        regs = [("q",), ("r",), ("q", "r")][int(rng.integers(0, 3))]
        d = 2 ** len(regs)
        return Proj(LabOp(rand_projection(rng, d, int(rng.integers(1, d + 1))), regs))
    if kind == 3:
        return Ite(parse_expr(str(rng.choice(_CONDS))), rand_bounded_assertion(rng, depth + 1),
                   rand_bounded_assertion(rng, depth + 1))
    if kind == 4:
        return Restrict(parse_expr(str(rng.choice(_CONDS))), rand_bounded_assertion(rng, depth + 1))
    if kind == 5:
        return Scale(float(rng.uniform(0, 2)), rand_bounded_assertion(rng, depth + 1))
    return Add((rand_bounded_assertion(rng, depth + 1), rand_bounded_assertion(rng, depth + 1)))


def all_envs_xy() -> list:
    return [{"x": a, "y": b} for a in range(4) for b in range(4)]


# ---------------------------------------------------------------------------
# transport instances


def rand_instance(rng, n1: int = None, n2: int = None, d1: int = None, d2: int = None,
                  diagonal: bool = False, trunc=None):
    from cqverify.transport import TransportInstance
    n1 = n1 or int(rng.integers(1, 4))
    n2 = n2 or int(rng.integers(1, 4))
    d1 = d1 or int(rng.integers(1, 3))
    d2 = d2 or int(rng.integers(1, 3))

    def state(n, d, var):
        w = rng.dirichlet(np.ones(n))
        ents = {}
        for i in range(n):
            rho = np.diag(rng.dirichlet(np.ones(d))) * w[i] if diagonal else rand_psd(rng, d, trace=float(w[i]))
            ents[Env({var: i})] = rho.astype(complex)
        return CqState(d, ents)

    D1, D2 = state(n1, d1, "a"), state(n2, d2, "b")
    blocks = {}
    for e1 in D1.envs():
        for e2 in D2.envs():
            D = d1 * d2
            M = np.diag(rng.uniform(0, 1, size=D)) if diagonal else rand_psd(rng, D, trace=float(rng.uniform(0.5, D)))
            blocks[(e1, e2)] = M.astype(complex)
    return TransportInstance.from_blocks(D1, D2, blocks, trunc)


def joint_from(inst, X: dict) -> JointCqState:
    """Joint state from a dict (env1, env2) -> matrix on d1*d2."""
    d1, d2 = inst.dims
    ents = {Env(e1).update(e2): M for (e1, e2), M in X.items()}
    v1 = {k for e1, _ in X for k in Env(e1)}
    v2 = {k for _, e2 in X for k in Env(e2)}
    return JointCqState((d1, d2), v1, v2, ents)


# ---------------------------------------------------------------------------
# programs with one loop

_LOOP_CONDS = ["x < 3", "x != y", "x == 0", "x + y < 4", "y != 1"]


def rand_loop_parts(rng, body_stmts: int = 3) -> tuple[str, str]:
    """(guard, body) text; most bodies resample a guard variable so the loop usually terminates."""
    cond = str(rng.choice(_LOOP_CONDS))
    budget = [int(rng.integers(1, body_stmts + 1))]
    body = []
    while budget[0] > 0:
        body.append(_stmt(rng, budget, 1))
    if rng.random() < 0.8:
        v = "y" if cond == "y != 1" else "x"
        body.append(f"{v} <$ {rng.choice(['mu', 'coin'])};" if rng.random() < 0.6
                    else f"{v} <- measure M01 {rng.choice(['q', 'r'])};")
    return cond, " ".join(body)


def loop_module(rng):
    """Module with prog `w` (while b c) and prog `u` (if b {c; while b c} else skip)."""
    cond, body = rand_loop_parts(rng)
    text = (HEADER + f"prog w {{ while {cond} {{ {body} }} }}\n"
            + f"prog u {{ if {cond} {{ {body} while {cond} {{ {body} }} }} else {{ skip; }} }}\n")
    return parse(text)
