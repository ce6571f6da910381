"""Quantitative assertions: expression trees evaluated per classical environment.

An assertion maps each classical environment to an infinite-valued predicate
(IVPredicate) on a register space. Trees are evaluated lazily and memoized per
(node, relevant bindings); labelled operators are lifted to whatever register
space the evaluator is built for, so the same tree serves one side of a
judgment or the joint space of both sides.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cqstate import CqState, Env, expectation
from .errors import CqSyntaxError, DimMismatch, DomainTooLarge, NotPSD, UnboundVariable
from .lang.ast import BinOp, Expr, KetExpr, Num, UnOp, Var
from .lang.decls import Decls, Space, enumerate_envs
from .opalg import (IVPredicate, check_hermitian, clean_projection, guard_embed, is_projection,
                    ivp_add, ivp_conjugate, ivp_leq, ivp_scale, ivp_sum, ivp_tensor, ivp_trunc,
                    min_eig, range_projection, subspace_basis, dag, subspace_leq)


# ---------------------------------------------------------------------------
# classical helpers


class ForallExpr(Expr):
    """forall names in their domains. body; evaluated by enumeration."""

    def __init__(self, names: Sequence[str], domains: Sequence[tuple[int, int]], body: Expr):
        self.names = tuple(names)
        self.domains = tuple(domains)
        self.body = body

    def __call__(self, env) -> int:
        import itertools
        ranges = [range(lo, hi + 1) for lo, hi in self.domains]
        base = dict(env)
        for vals in itertools.product(*ranges):
            base.update(zip(self.names, vals))
            if not self.body(base):
                return 0
        return 1

    def free_vars(self) -> set[str]:
        return self.body.free_vars() - set(self.names)

    def subst(self, mapping):
        inner = {k: v for k, v in mapping.items() if k not in self.names}
        return ForallExpr(self.names, self.domains, self.body.subst(inner))

    def __repr__(self) -> str:
        return f"ForallExpr({self.names}, {self.body!r})"


def _expr_sexpr(e: Expr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BinOp):
        return f"({_BIN_OUT.get(e.op, e.op)} {_expr_sexpr(e.left)} {_expr_sexpr(e.right)})"
    if isinstance(e, UnOp):
        return f"({'not' if e.op == '!' else '-'} {_expr_sexpr(e.arg)})"
    if isinstance(e, ForallExpr):
        return f"(forall ({' '.join(e.names)}) {_expr_sexpr(e.body)})"
    return repr(e)


_BIN_OUT = {"==": "=", "&&": "and", "||": "or", "->": "=>", "<->": "<=>"}


# ---------------------------------------------------------------------------
# labelled operators


@dataclass(eq=False)
class LabOp:
    """A matrix acting on an ordered tuple of registers."""

    matrix: np.ndarray
    regs: tuple
    label: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        self.regs = tuple(self.regs)
        if len(set(self.regs)) != len(self.regs):
            raise DimMismatch(f"register list {self.regs} repeats a register")

    def lifted(self, space: Space) -> np.ndarray:
        missing = [r for r in self.regs if r not in space]
        if missing:
            raise DimMismatch(f"registers {missing} are not in the space {space.regs}")
        d = space.reg_dim(self.regs)
        if self.matrix.shape != (d, d):
            raise DimMismatch(f"operator {self.label or ''} of shape {self.matrix.shape} on registers "
                              f"{self.regs} of dimension {d}")
        return space.lift(self.matrix, self.regs)

    def sexpr(self) -> str:
        name = self.label if self.label else "{" + _matrix_literal(self.matrix) + "}"
        return f"({name} {' '.join(self.regs)})"


def _matrix_literal(M: np.ndarray) -> str:
    def num(z):
        z = complex(z)
        if abs(z.imag) < 1e-15:
            return repr(float(z.real))
        return f"({float(z.real)!r} + {float(z.imag)!r}*i)"
    return "[" + ", ".join("[" + ", ".join(num(z) for z in row) + "]" for row in np.atleast_2d(M)) + "]"


# ---------------------------------------------------------------------------
# assertion nodes


class Assertion:
    """Base class; subclasses implement _eval, _fv and _regs."""

    _fv_cache: frozenset | None = None
    _regs_cache: frozenset | None = None

    def free_vars(self) -> frozenset:
        if self._fv_cache is None:
            object.__setattr__(self, "_fv_cache", frozenset(self._fv()))
        return self._fv_cache

    def regs(self) -> frozenset:
        if self._regs_cache is None:
            object.__setattr__(self, "_regs_cache", frozenset(self._regs()))
        return self._regs_cache

    def _fv(self) -> set:
        return set()

    def _regs(self) -> set:
        return set()

    def _eval(self, ev: "Evaluator", env) -> IVPredicate:
        raise NotImplementedError

    def sexpr(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.sexpr()

    # operator sugar
    def __add__(self, other: "Assertion") -> "Assertion":
        return Add((self, other))

    def __rmul__(self, r) -> "Assertion":
        return Scale(r, self)


@dataclass(eq=False)
class Const(Assertion):
    """r * I for finite r >= 0; r = inf gives inf * I."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("constant assertions must be non-negative")

    def _eval(self, ev, env):
        d = ev.space.dim
        if np.isinf(self.value):
            return IVPredicate.infinity(d)
        return IVPredicate.bounded(self.value * np.eye(d), check=False)

    def sexpr(self):
        if self.value == 0:
            return "(zero)"
        if self.value == 1:
            return "(id)"
        if np.isinf(self.value):
            return "(infinity)"
        return f"(const {self.value!r})"


@dataclass(eq=False)
class Op(Assertion):
    """A bounded PSD operator on labelled registers."""

    op: LabOp

    def _regs(self):
        return set(self.op.regs)

    def _eval(self, ev, env):
        M = ev.lift(self.op)
        if min_eig(M) < -1e-9:
            raise NotPSD(f"operator {self.op.sexpr()} is not positive semidefinite")
        return IVPredicate.bounded(M, check=False)

    def sexpr(self):
        return f"(op {self.op.sexpr()})"


@dataclass(eq=False)
class Proj(Assertion):
    """The projective assertion X | 0, i.e. inf on the complement of range(X)."""

    op: LabOp

    def _regs(self):
        return set(self.op.regs)

    def _eval(self, ev, env):
        return guard_embed(ev.projection(self.op), IVPredicate.zero(ev.space.dim))

    def sexpr(self):
        return f"(proj {self.op.sexpr()})"


@dataclass(eq=False)
class Infty(Assertion):
    """inf * X on the range of X."""

    op: LabOp

    def _regs(self):
        return set(self.op.regs)

    def _eval(self, ev, env):
        return IVPredicate.infinite_on(ev.projection(self.op))

    def sexpr(self):
        return f"(infty {self.op.sexpr()})"


@dataclass(eq=False)
class Guard(Assertion):
    """b | A: A where b holds, inf * I elsewhere (cls(b) is b | 0)."""

    cond: Expr
    body: Assertion

    def _fv(self):
        return self.cond.free_vars() | self.body.free_vars()

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        if self.cond(env):
            return ev(self.body, env)
        return IVPredicate.infinity(ev.space.dim)

    def sexpr(self):
        if isinstance(self.body, Const) and self.body.value == 0:
            return f"(cls {_expr_sexpr(self.cond)})"
        return f"(guard {_expr_sexpr(self.cond)} {self.body.sexpr()})"


@dataclass(eq=False)
class PGuard(Assertion):
    """X | A = A + inf * X^perp."""

    op: LabOp
    body: Assertion

    def _fv(self):
        return set(self.body.free_vars())

    def _regs(self):
        return set(self.op.regs) | self.body.regs()

    def _eval(self, ev, env):
        A = ev(self.body, env)
        if A.is_infinity:
            return A
        return guard_embed(ev.projection(self.op), A)

    def sexpr(self):
        return f"(pguard {self.op.sexpr()} {self.body.sexpr()})"


@dataclass(eq=False)
class Ite(Assertion):
    cond: Expr
    then: Assertion
    orelse: Assertion

    def _fv(self):
        return self.cond.free_vars() | self.then.free_vars() | self.orelse.free_vars()

    def _regs(self):
        return self.then.regs() | self.orelse.regs()

    def _eval(self, ev, env):
        return ev(self.then, env) if self.cond(env) else ev(self.orelse, env)

    def sexpr(self):
        return f"(ite {_expr_sexpr(self.cond)} {self.then.sexpr()} {self.orelse.sexpr()})"


@dataclass(eq=False)
class Restrict(Assertion):
    """A where b holds, 0 elsewhere."""

    cond: Expr
    body: Assertion

    def _fv(self):
        return self.cond.free_vars() | self.body.free_vars()

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        if self.cond(env):
            return ev(self.body, env)
        return IVPredicate.zero(ev.space.dim)

    def sexpr(self):
        return f"(restrict {_expr_sexpr(self.cond)} {self.body.sexpr()})"


@dataclass(eq=False)
class Scale(Assertion):
    """r * A with r a non-negative number or classical expression."""

    factor: object
    body: Assertion

    def _fv(self):
        fv = set(self.body.free_vars())
        if isinstance(self.factor, Expr):
            fv |= self.factor.free_vars()
        return fv

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        r = self.factor(env) if isinstance(self.factor, Expr) else self.factor
        if r < 0:
            raise ValueError(f"negative scale factor {r}")
        return ivp_scale(float(r), ev(self.body, env))

    def sexpr(self):
        r = _expr_sexpr(self.factor) if isinstance(self.factor, Expr) else repr(self.factor)
        return f"(scale {r} {self.body.sexpr()})"


@dataclass(eq=False)
class Add(Assertion):
    terms: tuple

    def __post_init__(self):
        self.terms = tuple(self.terms)

    def _fv(self):
        return set().union(*[t.free_vars() for t in self.terms]) if self.terms else set()

    def _regs(self):
        return set().union(*[t.regs() for t in self.terms]) if self.terms else set()

    def _eval(self, ev, env):
        return ivp_sum([ev(t, env) for t in self.terms], ev.space.dim)

    def sexpr(self):
        return "(add " + " ".join(t.sexpr() for t in self.terms) + ")"


@dataclass(eq=False)
class Split(Assertion):
    """A1 (x) id + id (x) A2 for A1, A2 on the two sides' registers."""

    left: Assertion
    right: Assertion

    def __post_init__(self):
        common = self.left.regs() & self.right.regs()
        if common:
            raise DimMismatch(f"split assertion sides share registers {sorted(common)}")

    def _fv(self):
        return self.left.free_vars() | self.right.free_vars()

    def _regs(self):
        return self.left.regs() | self.right.regs()

    def _eval(self, ev, env):
        return ivp_add(ev(self.left, env), ev(self.right, env))

    def sexpr(self):
        return f"(split {self.left.sexpr()} {self.right.sexpr()})"


def _perm_matrix(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """Matrix sending the basis of prod(dims) to the basis with factors reordered."""
    n = int(np.prod(dims))
    idx = np.arange(n).reshape(dims)
    new = np.transpose(idx, order).reshape(-1)
    P = np.zeros((n, n))
    P[np.arange(n), new] = 1
    return P


@dataclass(eq=False)
class Tensor(Assertion):
    """A (x) B with A on the registers it mentions and B on the rest of the space."""

    left: Assertion
    right: Assertion

    def _fv(self):
        return self.left.free_vars() | self.right.free_vars()

    def _regs(self):
        return self.left.regs() | self.right.regs()

    def _eval(self, ev, env):
        sp = ev.space
        ra = [r for r in sp.regs if r in self.left.regs()]
        rb = [r for r in sp.regs if r not in self.left.regs()]
        if set(self.right.regs()) - set(rb):
            raise DimMismatch("tensor factors must act on disjoint registers")
        sa = Space(tuple(ra), tuple(sp.dims[sp.regs.index(r)] for r in ra))
        sb = Space(tuple(rb), tuple(sp.dims[sp.regs.index(r)] for r in rb))
        T = ivp_tensor(ev.sub(sa)(self.left, env), ev.sub(sb)(self.right, env))
        order = [sp.regs.index(r) for r in ra + rb]
        return ivp_conjugate(_perm_matrix(sp.dims, order), T)

    def sexpr(self):
        return f"(tensor {self.left.sexpr()} {self.right.sexpr()})"


@dataclass(eq=False)
class Conj(Assertion):
    """K^dag A K for a labelled operator K."""

    op: LabOp
    body: Assertion

    def _fv(self):
        return set(self.body.free_vars())

    def _regs(self):
        return set(self.op.regs) | self.body.regs()

    def _eval(self, ev, env):
        return ivp_conjugate(ev.lift(self.op), ev(self.body, env))

    def sexpr(self):
        return f"(conj {self.op.sexpr()} {self.body.sexpr()})"


@dataclass(eq=False)
class InitPre(Assertion):
    """sum_i |i><v| A |v><i| on the given registers (v may depend on the env)."""

    regs_: tuple
    ket: object  # numpy vector or KetExpr with an index expression
    body: Assertion

    def _fv(self):
        fv = set(self.body.free_vars())
        if isinstance(self.ket, KetExpr) and self.ket.index is not None:
            fv |= self.ket.index.free_vars()
        return fv

    def _regs(self):
        return set(self.regs_) | self.body.regs()

    def _eval(self, ev, env):
        d = ev.space.reg_dim(self.regs_)
        if isinstance(self.ket, KetExpr):
            i = self.ket.index(env)
            if not 0 <= i < d:
                return IVPredicate.zero(ev.space.dim)
            v = np.zeros(d, dtype=complex)
            v[i] = 1
        else:
            v = np.asarray(self.ket, dtype=complex)
        A = ev(self.body, env)
        terms = [ivp_conjugate(ev.space.lift(np.outer(v, np.eye(d)[i]), self.regs_), A) for i in range(d)]
        return ivp_sum(terms, ev.space.dim)

    def sexpr(self):
        k = _expr_sexpr(self.ket.index) if isinstance(self.ket, KetExpr) else "{" + repr(list(np.asarray(self.ket))) + "}"
        return f"(init ({' '.join(self.regs_)}) {k} {self.body.sexpr()})"


@dataclass(eq=False)
class MeasPre(Assertion):
    """sum_i M_i^dag A[i/x] M_i."""

    meas: dict
    regs_: tuple
    var: str
    body: Assertion
    label: str = ""

    def _fv(self):
        return set(self.body.free_vars()) - {self.var}

    def _regs(self):
        return set(self.regs_) | self.body.regs()

    def _eval(self, ev, env):
        terms = []
        for i, M in self.meas.items():
            K = ev.space.lift(np.asarray(M, dtype=complex), self.regs_)
            terms.append(ivp_conjugate(K, ev(self.body, Env(env).set(self.var, i))))
        return ivp_sum(terms, ev.space.dim)

    def sexpr(self):
        return f"(measpre {self.label or 'M'} ({' '.join(self.regs_)}) {self.var} {self.body.sexpr()})"


@dataclass(eq=False)
class DistExpect(Assertion):
    """E_{v ~ mu}[A[v/x]]."""

    mu: dict
    var: str
    body: Assertion
    label: str = ""

    def _fv(self):
        return set(self.body.free_vars()) - {self.var}

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        env = Env(env)
        terms = [ivp_scale(p, ev(self.body, env.set(self.var, v))) for v, p in self.mu.items() if p > 0]
        return ivp_sum(terms, ev.space.dim)

    def sexpr(self):
        mu = self.label or "{" + " ".join(f"{v} {p!r}" for v, p in self.mu.items()) + "}"
        return f"(dexp {mu} {self.var} {self.body.sexpr()})"


@dataclass(eq=False)
class PairExpect(Assertion):
    """E_{(v, w) ~ mu}[A[v/x1, w/x2]] for a joint distribution mu over pairs."""

    mu: dict
    var1: str
    var2: str
    body: Assertion

    def _fv(self):
        return set(self.body.free_vars()) - {self.var1, self.var2}

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        env = Env(env)
        terms = [ivp_scale(p, ev(self.body, env.set(self.var1, v).set(self.var2, w)))
                 for (v, w), p in self.mu.items() if p > 0]
        return ivp_sum(terms, ev.space.dim)

    def sexpr(self):
        mu = "{" + " ".join(f"({v} {w}) {p!r}" for (v, w), p in self.mu.items()) + "}"
        return f"(pexp {mu} {self.var1} {self.var2} {self.body.sexpr()})"


@dataclass(eq=False)
class Subst(Assertion):
    """A[e/x], simultaneous over all pairs in mapping."""

    body: Assertion
    mapping: tuple  # ((var, Expr), ...)

    def _fv(self):
        names = {x for x, _ in self.mapping}
        fv = set(self.body.free_vars()) - names
        for _, e in self.mapping:
            fv |= e.free_vars()
        return fv

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        new = Env(env).update({x: e(env) for x, e in self.mapping})
        return ev(self.body, new)

    def sexpr(self):
        s = self.body.sexpr()
        for x, e in self.mapping:
            s = f"(subst {s} {x} {_expr_sexpr(e)})"
        return s


@dataclass(eq=False)
class Trunc(Assertion):
    body: Assertion
    level: float

    def _fv(self):
        return set(self.body.free_vars())

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        return IVPredicate.bounded(ivp_trunc(ev(self.body, env), self.level), check=False)

    def sexpr(self):
        return f"(trunc {self.body.sexpr()} {self.level!r})"


@dataclass(eq=False)
class Table(Assertion):
    """Extensional assertion: one IVPredicate per binding of `vars_`."""

    vars_: tuple
    entries: dict  # tuple of values -> IVPredicate
    space: Space
    default: IVPredicate | None = None
    name: str = "table"

    def _fv(self):
        return set(self.vars_)

    def _regs(self):
        return set(self.space.regs)

    def _eval(self, ev, env):
        if ev.space != self.space:
            raise DimMismatch(f"table over {self.space.regs} evaluated on {ev.space.regs}")
        key = tuple(env[v] for v in self.vars_)
        try:
            return self.entries[key]
        except KeyError:
            if self.default is not None:
                return self.default
            raise UnboundVariable(f"{self.name} has no entry for {dict(zip(self.vars_, key))}") from None

    def sexpr(self):
        return f"({self.name} {' '.join(self.vars_)})"


@dataclass(eq=False)
class Named(Assertion):
    """A reference to a defined assertion (keeps printed forms short)."""

    name: str
    body: Assertion

    def _fv(self):
        return set(self.body.free_vars())

    def _regs(self):
        return set(self.body.regs())

    def _eval(self, ev, env):
        return ev(self.body, env)

    def sexpr(self):
        return self.name


# ---------------------------------------------------------------------------
# constructors


def zero() -> Assertion:
    return Const(0.0)


def ident() -> Assertion:
    return Const(1.0)


def const(r: float) -> Assertion:
    return Const(float(r))


def infinity() -> Assertion:
    return Const(float("inf"))


def cls(b: Expr) -> Assertion:
    return Guard(b, zero())


def guard(b: Expr, A: Assertion) -> Assertion:
    return Guard(b, A)


def pguard(op: LabOp, A: Assertion) -> Assertion:
    return PGuard(op, A)


def op(M, regs, label: str = "") -> Assertion:
    return Op(LabOp(M, tuple(regs), label))


def proj(M, regs, label: str = "") -> Assertion:
    return Proj(LabOp(M, tuple(regs), label))


def subst_assertion(A: Assertion, x: str, e: Expr | int) -> Assertion:
    e = Num(int(e)) if not isinstance(e, Expr) else e
    return Subst(A, ((x, e),))


def subst_many(A: Assertion, mapping: Mapping[str, Expr]) -> Assertion:
    return Subst(A, tuple((x, e if isinstance(e, Expr) else Num(int(e))) for x, e in mapping.items()))


def dist_expect(mu: dict, x: str, A: Assertion, label: str = "") -> Assertion:
    return DistExpect(dict(mu), x, A, label)


def split_assn(A1: Assertion, A2: Assertion) -> Assertion:
    return Split(A1, A2)


def trunc(A: Assertion, n: float) -> Assertion:
    return Trunc(A, float(n))


# ---------------------------------------------------------------------------
# evaluation


class Evaluator:
    """Memoizing evaluator of assertions on a fixed register space."""

    def __init__(self, space: Space):
        self.space = space
        self._memo: dict = {}
        self._keep: list = []
        self._ops: dict = {}
        self._subs: dict = {}

    def __call__(self, A: Assertion, env) -> IVPredicate:
        fv = A.free_vars()
        try:
            key = (id(A), tuple(sorted((v, env[v]) for v in fv)))
        except KeyError as exc:
            raise UnboundVariable(f"variable {exc} is not bound in {A.sexpr()[:80]}") from None
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        val = A._eval(self, env)
        if val.dim != self.space.dim:
            raise DimMismatch(f"assertion evaluated to dim {val.dim}, space has {self.space.dim}")
        self._memo[key] = val
        self._keep.append(A)
        return val

    def lift(self, lop: LabOp) -> np.ndarray:
        k = id(lop)
        if k not in self._ops:
            self._ops[k] = (lop, lop.lifted(self.space))
        return self._ops[k][1]

    def projection(self, lop: LabOp) -> np.ndarray:
        k = ("P", id(lop))
        if k not in self._ops:
            M = self.lift(lop)
            X = clean_projection(M) if is_projection(M) else range_projection(M)
            self._ops[k] = (lop, X)
        return self._ops[k][1]

    def sub(self, space: Space) -> "Evaluator":
        if space not in self._subs:
            self._subs[space] = Evaluator(space)
        return self._subs[space]

    def fn(self, A: Assertion):
        return lambda env: self(A, env)


def eval_assertion(A: Assertion, env, space: Space) -> IVPredicate:
    return Evaluator(space)(A, Env(env) if not isinstance(env, Env) else env)


def assertion_expectation(delta: CqState, A: Assertion, space: Space, ev: Evaluator | None = None,
                          eps: float = 1e-9) -> float:
    """E_delta[A] = sum over envs of tr(A(env) rho_env), with inf conventions."""
    ev = ev or Evaluator(space)
    if delta.qdim != space.dim:
        raise DimMismatch(f"state qdim {delta.qdim} vs space dim {space.dim}")
    return expectation(delta, ev.fn(A), eps)


def assertion_vars(decls: Decls, *As: Assertion, extra: Iterable[str] = ()) -> list[str]:
    names = set(extra)
    for A in As:
        names |= set(A.free_vars())
    unknown = [n for n in names if n not in decls.cvars]
    if unknown:
        raise UnboundVariable(f"undeclared classical variables {sorted(unknown)}")
    return decls.order_cvars(names)


@dataclass
class EntailResult:
    holds: bool
    envs_checked: int
    counterexample: dict | None = None
    slack: float = 0.0

    def __bool__(self) -> bool:
        return self.holds


def entail_check(phi: Assertion, psi: Assertion, space: Space, decls: Decls, tol: float = 1e-8,
                 cap: int = 1_000_000, vars_: Sequence[str] | None = None,
                 envs: Sequence[Env] | None = None, ev: Evaluator | None = None) -> EntailResult:
    """Decide phi below psi (pointwise Loewner order on IVPs) over the finite domain."""
    ev = ev or Evaluator(space)
    if envs is None:
        names = list(vars_) if vars_ is not None else assertion_vars(decls, phi, psi)
        envs = enumerate_envs(decls, names, cap)
    elif len(envs) > cap:
        raise DomainTooLarge(f"{len(envs)} environments exceed the enumeration cap {cap}")
    for n, env in enumerate(envs):
        b = ev(psi, env)
        if b.is_infinity:
            continue
        a = ev(phi, env)
        if not ivp_leq(a, b, tol):
            return EntailResult(False, n + 1, dict(env), _slack(a, b))
    return EntailResult(True, len(envs))


def _slack(a: IVPredicate, b: IVPredicate) -> float:
    if not a.is_bounded and not subspace_leq(a.inf, b.inf):
        return float("-inf")
    D = b.finite - a.finite
    if not b.is_bounded:
        B = subspace_basis(np.eye(a.dim) - b.inf)
        if B.shape[1] == 0:
            return 0.0
        D = dag(B) @ D @ B
    return float(min_eig(D))


def entails(phi: Assertion, psi: Assertion, space: Space, decls: Decls, tol: float = 1e-8,
            cap: int = 1_000_000, **kw) -> bool:
    """True iff phi is below psi at every environment of the finite domain."""
    return entail_check(phi, psi, space, decls, tol, cap, **kw).holds


def is_bounded_on(A: Assertion, space: Space, envs: Iterable[Env]) -> bool:
    ev = Evaluator(space)
    return all(ev(A, e).is_bounded for e in envs)


# ---------------------------------------------------------------------------
# s-expression reader

_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|(\{)|([^\s(){};]+))")


def _sx_tokens(text: str) -> list:
    out = []
    i, n = 0, len(text)
    line = 1
    while i < n:
        m = _TOKEN.match(text, i)
        if not m or m.end() == i:
            if text[i:].strip() == "":
                break
            raise CqSyntaxError(f"unexpected character {text[i]!r} in assertion", line, 0)
        line += text.count("\n", i, m.end())
        if m.group(1):
            pass
        elif m.group(2):
            out.append(("(", line))
        elif m.group(3):
            out.append((")", line))
        elif m.group(4):
            depth, j = 1, m.end()
            while j < n and depth:
                depth += {"{": 1, "}": -1}.get(text[j], 0)
                j += 1
            if depth:
                raise CqSyntaxError("unbalanced '{' in assertion", line, 0)
            out.append((("raw", text[m.end():j - 1]), line))
            line += text.count("\n", m.end(), j)
            i = j
            continue
        elif m.group(5):
            out.append((m.group(5), line))
        i = m.end()
    return out


def _sx_read(tokens: list, pos: int):
    if pos >= len(tokens):
        raise CqSyntaxError("unexpected end of assertion", tokens[-1][1] if tokens else 0, 0)
    tok, line = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise CqSyntaxError("missing ')' in assertion", line, 0)
            if tokens[pos][0] == ")":
                return _SList(items, line), pos + 1
            item, pos = _sx_read(tokens, pos)
            items.append(item)
    if tok == ")":
        raise CqSyntaxError("unexpected ')' in assertion", line, 0)
    return tok, pos + 1


class _SList(list):
    def __init__(self, items, line):
        super().__init__(items)
        self.line = line


def read_sexprs(text: str) -> list:
    toks = _sx_tokens(text)
    out, pos = [], 0
    while pos < len(toks):
        item, pos = _sx_read(toks, pos)
        out.append(item)
    return out


_CMP = {"=": "==", "==": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">=",
        "=>": "->", "->": "->", "<=>": "<->", "<->": "<->", "+": "+", "-": "-", "*": "*",
        "/": "/", "%": "%"}
_RESERVED = {"zero", "id", "infinity", "const", "op", "proj", "infty", "cls", "guard", "pguard",
             "ite", "restrict", "scale", "add", "tensor", "split", "dexp", "subst", "trunc", "conj",
             "define", "init", "measpre"}


class AssertionReader:
    """Reads assertion s-expressions against a declaration table."""

    def __init__(self, decls: Decls, defs: dict | None = None):
        self.decls = decls
        self.defs: dict = dict(defs or {})

    def _err(self, msg: str, node) -> CqSyntaxError:
        return CqSyntaxError(msg, getattr(node, "line", 0), 0)

    # classical expressions, prefix or {infix}
    def expr(self, node) -> Expr:
        from .lang.parser import parse_expr
        if isinstance(node, tuple) and node[0] == "raw":
            return parse_expr(node[1])
        if isinstance(node, str):
            if re.fullmatch(r"-?\d+", node):
                return Num(int(node))
            if node == "true":
                return Num(1)
            if node == "false":
                return Num(0)
            return Var(node)
        if not node:
            raise self._err("empty classical expression", node)
        head = node[0]
        args = [self.expr(a) for a in node[1:]] if head != "forall" else None
        if head in ("and", "or"):
            op_ = "&&" if head == "and" else "||"
            if not args:
                return Num(1 if head == "and" else 0)
            out = args[0]
            for a in args[1:]:
                out = BinOp(op_, out, a)
            return out
        if head == "not":
            return UnOp("!", args[0])
        if head == "-" and len(args) == 1:
            return UnOp("-", args[0])
        if head == "forall":
            names = list(node[1])
            return ForallExpr(names, [self.decls.domain(x) for x in names], self.expr(node[2]))
        if head in _CMP:
            if len(args) < 2:
                raise self._err(f"operator {head} needs two arguments", node)
            out = BinOp(_CMP[head], args[0], args[1])
            for a in args[2:]:
                out = BinOp(_CMP[head], out, a)
            return out
        raise self._err(f"unknown classical operator '{head}'", node)

    def labop(self, node) -> LabOp:
        from .lang.parser import parse_const
        if not isinstance(node, list) or not node:
            raise self._err("expected (MATRIX reg ...)", node)
        head, regs = node[0], tuple(node[1:])
        for r in regs:
            if r not in self.decls.qvars:
                raise self._err(f"unknown quantum variable '{r}'", node)
        if isinstance(head, tuple):
            M = parse_const(head[1], self.decls)
            label = "{" + head[1] + "}"
        else:
            try:
                M = self.decls.matrix(head)
            except Exception:
                raise self._err(f"unknown matrix '{head}'", node) from None
            label = head
        M = np.asarray(M, dtype=complex)
        if M.ndim == 1:
            M = np.outer(M, M.conj())
        return LabOp(M, regs, label)

    def number(self, node) -> float:
        from .lang.parser import parse_const
        if isinstance(node, tuple):
            return float(np.real(parse_const(node[1], self.decls)))
        try:
            return float(node)
        except (TypeError, ValueError):
            if isinstance(node, str) and "/" in node:
                a, b = node.split("/", 1)
                return float(a) / float(b)
            raise self._err(f"expected a number, found {node!r}", node) from None

    def dist(self, node) -> tuple[dict, str]:
        if isinstance(node, str):
            if node not in self.decls.dists:
                raise self._err(f"unknown distribution '{node}'", node)
            return self.decls.dists[node], node
        if isinstance(node, list) and node and node[0] == "bern":
            p = self.number(node[1])
            return {0: 1 - p, 1: p}, f"(bern {node[1]})"
        if isinstance(node, list) and node and node[0] == "dist":
            items = node[1:]
            return {int(items[k]): self.number(items[k + 1]) for k in range(0, len(items), 2)}, "(dist ...)"
        raise self._err("expected a distribution", node)

    def assertion(self, node) -> Assertion:
        if isinstance(node, str):
            if node in self.defs:
                return Named(node, self.defs[node])
            raise self._err(f"unknown assertion '{node}'", node)
        if not isinstance(node, list) or not node:
            raise self._err("expected an assertion form", node)
        head, args = node[0], node[1:]
        A = self.assertion
        try:
            if head == "zero":
                return zero()
            if head == "id":
                return ident()
            if head == "infinity":
                return infinity()
            if head == "const":
                return const(self.number(args[0]))
            if head == "op":
                return Op(self.labop(args[0]))
            if head == "proj":
                return Proj(self.labop(args[0]))
            if head == "infty":
                return Infty(self.labop(args[0]))
            if head == "cls":
                return cls(self.expr(args[0]))
            if head == "guard":
                return Guard(self.expr(args[0]), A(args[1]))
            if head == "pguard":
                return PGuard(self.labop(args[0]), A(args[1]))
            if head == "ite":
                return Ite(self.expr(args[0]), A(args[1]), A(args[2]))
            if head == "restrict":
                return Restrict(self.expr(args[0]), A(args[1]))
            if head == "scale":
                f = args[0]
                try:
                    r = self.number(f)
                except CqSyntaxError:
                    r = self.expr(f)
                return Scale(r, A(args[1]))
            if head == "add":
                return Add(tuple(A(a) for a in args))
            if head == "tensor":
                return Tensor(A(args[0]), A(args[1]))
            if head == "split":
                return Split(A(args[0]), A(args[1]))
            if head == "dexp":
                mu, label = self.dist(args[0])
                return DistExpect(mu, args[1], A(args[2]), label)
            if head == "subst":
                return subst_assertion(A(args[0]), args[1], self.expr(args[2]))
            if head == "trunc":
                return Trunc(A(args[0]), self.number(args[1]))
            if head == "conj":
                return Conj(self.labop(args[0]), A(args[1]))
        except IndexError:
            raise self._err(f"too few arguments to '{head}'", node) from None
        raise self._err(f"unknown assertion form '{head}'", node)

    def read(self, text: str) -> Assertion:
        forms = read_sexprs(text)
        if len(forms) != 1:
            raise CqSyntaxError(f"expected one assertion, found {len(forms)} forms", 0, 0)
        return self.assertion(forms[0])

    def read_file(self, text: str) -> dict:
        """Process (define name A) forms; a trailing bare form is stored as 'main'."""
        for form in read_sexprs(text):
            if isinstance(form, list) and form and form[0] == "define":
                if len(form) != 3 or not isinstance(form[1], str):
                    raise self._err("expected (define NAME ASSERTION)", form)
                if form[1] in _RESERVED:
                    raise self._err(f"'{form[1]}' is a reserved word", form)
                self.defs[form[1]] = self.assertion(form[2])
            else:
                self.defs["main"] = self.assertion(form)
        return self.defs


def parse_assertion(text: str, decls: Decls, defs: dict | None = None) -> Assertion:
    return AssertionReader(decls, defs).read(text)


def parse_assertion_file(text: str, decls: Decls, defs: dict | None = None) -> dict:
    return AssertionReader(decls, defs).read_file(text)
