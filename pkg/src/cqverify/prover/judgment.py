"""Relational judgments, checker options and the two-sided checking context."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assertions import Assertion, AssertionReader, Evaluator, entail_check
from ..config import Config
from ..cqstate import Env
from ..errors import SideOverlap
from ..lang.ast import Command, Skip, classical_vars, quantum_vars, statements
from ..lang.decls import Decls, Program, Space, enumerate_envs
from ..lang.printer import pretty_command
from ..semantics import SemOpts
from ..wp import WpOpts


@dataclass(frozen=True)
class CheckOpts:
    entail_tol: float = 1e-8
    coupling_tol: float = 1e-8
    oracle_tol: float = 1e-6
    solver_tol: float = 1e-5
    solver_max_iters: int = 20_000
    cap: int = 1_000_000
    probes: int = 10
    seed: int = 0
    assume_ast: bool = False
    hast_report: bool = True
    hast_probes: int = 4
    hast_iters: int = 200
    sem: SemOpts = SemOpts(on_overflow="abort")
    wp: WpOpts = WpOpts()

    @classmethod
    def from_config(cls, cfg: Config, **kw) -> "CheckOpts":
        base = dict(entail_tol=cfg.entail_tol, coupling_tol=cfg.coupling_tol, solver_tol=cfg.solver_tol,
                    solver_max_iters=cfg.solver_max_iters, cap=cfg.enum_cap, seed=cfg.seed,
                    sem=SemOpts(loop_max_iters=cfg.loop_max_iters, loop_residual_tol=cfg.loop_residual_tol,
                                prune_tol=cfg.prune_tol, on_overflow="abort"),
                    wp=WpOpts(max_iters=cfg.wp_max_iters, tol=cfg.wp_tol, cap=cfg.enum_cap))
        base.update({k: v for k, v in kw.items() if v is not None})
        return cls(**base)


def one_line(c: Command) -> str:
    if not statements(c):
        return "skip"
    return " ".join(line.strip() for line in pretty_command(c).splitlines())


@dataclass(eq=False)
class Judgment:
    """{pre} c1 ~ c2 {post}; the two commands act on disjoint variables."""

    pre: Assertion
    c1: Command
    c2: Command
    post: Assertion

    def __post_init__(self):
        cv = classical_vars(self.c1) & classical_vars(self.c2)
        qv = quantum_vars(self.c1) & quantum_vars(self.c2)
        if cv or qv:
            raise SideOverlap(f"both sides use {sorted(cv | qv)}")

    def side(self, k: int) -> Command:
        return self.c1 if k == 1 else self.c2

    def replace(self, **kw) -> "Judgment":
        d = dict(pre=self.pre, c1=self.c1, c2=self.c2, post=self.post)
        d.update(kw)
        return Judgment(**d)

    @property
    def closed_programs(self) -> bool:
        return not statements(self.c1) and not statements(self.c2)

    def __str__(self) -> str:
        return f"{{{self.pre}}} {one_line(self.c1)} ~ {one_line(self.c2)} {{{self.post}}}"


@dataclass
class Probe:
    """Input of a relational run: per-side environments and a joint quantum state."""

    env1: Env
    env2: Env
    rho: np.ndarray

    def to_json(self) -> dict:
        from ..cqstate import matrix_to_json
        return {"env1": self.env1.to_json(), "env2": self.env2.to_json(), "rho": matrix_to_json(self.rho)}


class Context:
    """Declarations, per-side register spaces and variables of a two-program goal."""

    def __init__(self, decls: Decls, prog1: Program, prog2: Program, opts: CheckOpts = CheckOpts(),
                 defs: dict | None = None, probes: list | None = None):
        self.decls = decls
        self.prog1, self.prog2 = prog1, prog2
        self.opts = opts
        shared_c = set(prog1.cvars) & set(prog2.cvars)
        shared_q = set(prog1.qvars) & set(prog2.qvars)
        if shared_c or shared_q:
            raise SideOverlap(f"programs {prog1.name} and {prog2.name} share {sorted(shared_c | shared_q)}")
        self.space1, self.space2 = prog1.space, prog2.space
        self.joint = self.space1.concat(self.space2)
        self.vars1, self.vars2 = list(prog1.cvars), list(prog2.cvars)
        self.ev = Evaluator(self.joint)
        self.reader = AssertionReader(decls, defs)
        self.probes = list(probes or [])
        self.rng = np.random.default_rng(opts.seed)

    @property
    def split(self) -> tuple[int, int]:
        return self.space1.dim, self.space2.dim

    def side_space(self, k: int) -> Space:
        return self.space1 if k == 1 else self.space2

    def side_vars(self, k: int) -> list[str]:
        return self.vars1 if k == 1 else self.vars2

    def side_of(self, var: str) -> int:
        if var in self.vars1:
            return 1
        if var in self.vars2:
            return 2
        return 0

    def read(self, text_or_form) -> Assertion:
        if isinstance(text_or_form, Assertion):
            return text_or_form
        return self.reader.read(text_or_form)

    def entail(self, phi: Assertion, psi: Assertion, vars_=None):
        """phi below psi on the joint space over all environments of their variables."""
        return entail_check(phi, psi, self.joint, self.decls, self.opts.entail_tol, self.opts.cap,
                            vars_=vars_, ev=self.ev)

    def envs(self, names) -> list[Env]:
        return enumerate_envs(self.decls, self.decls.order_cvars(names), self.opts.cap)

    def split_env(self, env: Env) -> tuple[Env, Env]:
        e1 = {k: v for k, v in env.items() if self.side_of(k) != 2}
        e2 = {k: v for k, v in env.items() if self.side_of(k) == 2}
        return Env(e1), Env(e2)


def skip() -> Command:
    return Skip()
