"""Declaration tables, register spaces and built-in constants."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..cqstate import Env
from ..errors import DimMismatch, DomainTooLarge, DuplicateDecl, UnboundVariable
from ..opalg import lift_map
from .ast import Command, classical_vars, quantum_vars

SQ2 = 1 / math.sqrt(2)


def _ctrl(U: np.ndarray) -> np.ndarray:
    d = U.shape[0]
    out = np.zeros((2 * d, 2 * d), dtype=complex)
    out[:d, :d] = np.eye(d)
    out[d:, d:] = U
    return out


def swap_op(d: int = 2) -> np.ndarray:
    S = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            S[i * d + j, j * d + i] = 1
    return S


def peq_op(d: int = 2) -> np.ndarray:
    """Projection onto span{|ii>}: classical equality of two d-level registers."""
    P = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        P[i * d + i, i * d + i] = 1
    return P


def psym_op(d: int = 2) -> np.ndarray:
    """Projection onto the symmetric subspace, (I + SWAP)/2."""
    return (np.eye(d * d) + swap_op(d)) / 2


def basis_ket(i: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[int(i)] = 1
    return v


BUILTIN_CONSTS = {
    "I2": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[SQ2, SQ2], [SQ2, -SQ2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "T": np.array([[1, 0], [0, np.exp(1j * math.pi / 4)]], dtype=complex),
    "CNOT": _ctrl(np.array([[0, 1], [1, 0]], dtype=complex)),
    "CZ": _ctrl(np.array([[1, 0], [0, -1]], dtype=complex)),
    "SWAP": swap_op(2),
    "P0": np.array([[1, 0], [0, 0]], dtype=complex),
    "P1": np.array([[0, 0], [0, 1]], dtype=complex),
    "Pplus": np.full((2, 2), 0.5, dtype=complex),
    "Pminus": np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex),
    "Peq": peq_op(2),
    "Psym": psym_op(2),
    "ket0": np.array([1, 0], dtype=complex),
    "ket1": np.array([0, 1], dtype=complex),
    "plus": np.array([SQ2, SQ2], dtype=complex),
    "minus": np.array([SQ2, -SQ2], dtype=complex),
}

BUILTIN_FUNCS = {
    "sqrt": lambda x: complex(x) ** 0.5 if complex(x).imag or complex(x).real < 0 else math.sqrt(complex(x).real),
    "exp": lambda x: complex(np.exp(complex(x))),
    "kron": lambda *ms: _kron(*ms),
    "dag": lambda m: np.asarray(m).conj().T,
    "ctrl": lambda m: _ctrl(np.asarray(m, dtype=complex)),
    "Peq": lambda d: peq_op(int(_real(d))),
    "Psym": lambda d: psym_op(int(_real(d))),
    "SWAPd": lambda d: swap_op(int(_real(d))),
    "eye": lambda d: np.eye(int(_real(d)), dtype=complex),
    "zeros": lambda d: np.zeros((int(_real(d)), int(_real(d))), dtype=complex),
    "basis": lambda i, d: basis_ket(int(_real(i)), int(_real(d))),
    "proj": lambda v: np.outer(np.asarray(v), np.asarray(v).conj()),
    "outer": lambda u, v: np.outer(np.asarray(u), np.asarray(v).conj()),
    "dot": lambda *ms: _dot(*ms),
}


def _real(x) -> float:
    z = complex(x)
    if abs(z.imag) > 1e-12:
        raise ValueError(f"expected a real number, got {x}")
    return z.real


def _kron(*ms):
    arrs = [np.asarray(m, dtype=complex) for m in ms]
    if len({a.ndim for a in arrs}) != 1:
        raise DimMismatch("kron of a vector with a matrix")
    out = arrs[0]
    for a in arrs[1:]:
        out = np.kron(out, a)
    return out


def _dot(*ms):
    out = np.asarray(ms[0], dtype=complex)
    for m in ms[1:]:
        out = out @ np.asarray(m, dtype=complex)
    return out


@dataclass
class Space:
    """Ordered quantum registers spanning a Hilbert space."""

    regs: tuple = ()
    dims: tuple = ()

    def __post_init__(self):
        self.regs = tuple(self.regs)
        self.dims = tuple(int(d) for d in self.dims)
        self._index = {r: i for i, r in enumerate(self.regs)}

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims)) if self.dims else 1

    def __contains__(self, reg: str) -> bool:
        return reg in self._index

    def positions(self, regs: Sequence[str]) -> list[int]:
        try:
            return [self._index[r] for r in regs]
        except KeyError as exc:
            raise UnboundVariable(f"quantum register {exc.args[0]} is not in this space") from None

    def reg_dim(self, regs: Sequence[str]) -> int:
        return int(np.prod([self.dims[self._index[r]] for r in regs])) if regs else 1

    def lift(self, M: np.ndarray, regs: Sequence[str]) -> np.ndarray:
        return lift_map(np.asarray(M, dtype=complex), self.positions(regs), self.dims)

    def lift_rect(self, M: np.ndarray, regs: Sequence[str], out_dims: Sequence[int]) -> np.ndarray:
        return lift_map(np.asarray(M, dtype=complex), self.positions(regs), self.dims, out_dims)

    def concat(self, other: "Space") -> "Space":
        return Space(self.regs + other.regs, self.dims + other.dims)

    def __eq__(self, other) -> bool:
        return isinstance(other, Space) and self.regs == other.regs and self.dims == other.dims

    def __hash__(self):
        return hash((self.regs, self.dims))


@dataclass
class Decls:
    cvars: dict = field(default_factory=dict)      # name -> (lo, hi)
    qvars: dict = field(default_factory=dict)      # name -> dim
    dists: dict = field(default_factory=dict)      # name -> {value: prob}
    meas: dict = field(default_factory=dict)       # name -> {outcome: operator}
    unitaries: dict = field(default_factory=dict)  # name -> matrix
    kets: dict = field(default_factory=dict)       # name -> vector
    matrices: dict = field(default_factory=dict)   # name -> matrix

    def all_names(self) -> set[str]:
        return (set(self.cvars) | set(self.qvars) | set(self.dists) | set(self.meas)
                | set(self.unitaries) | set(self.kets) | set(self.matrices))

    def check_fresh(self, name: str):
        if name in self.all_names():
            raise DuplicateDecl(f"'{name}' is declared twice")

    def constant(self, name: str):
        for table in (self.matrices, self.unitaries, self.kets):
            if name in table:
                return table[name]
        if name in BUILTIN_CONSTS:
            return BUILTIN_CONSTS[name]
        raise UnboundVariable(f"unknown constant '{name}'")

    def matrix(self, name: str) -> np.ndarray:
        M = np.asarray(self.constant(name), dtype=complex)
        if M.ndim != 2:
            raise DimMismatch(f"'{name}' is not a matrix")
        return M

    def unitary(self, name: str) -> np.ndarray:
        if name in self.unitaries:
            return self.unitaries[name]
        return self.matrix(name)

    def ket_vector(self, name: str) -> np.ndarray:
        if name in self.kets:
            return self.kets[name]
        v = BUILTIN_CONSTS.get(name)
        if v is None or np.asarray(v).ndim != 1:
            raise UnboundVariable(f"unknown ket '{name}'")
        return v

    def is_ket_name(self, name: str) -> bool:
        if name in self.cvars:
            return False
        return name in self.kets or (name in BUILTIN_CONSTS and np.asarray(BUILTIN_CONSTS[name]).ndim == 1)

    def domain(self, var: str) -> tuple[int, int]:
        try:
            return self.cvars[var]
        except KeyError:
            raise UnboundVariable(f"classical variable '{var}' is not declared") from None

    def order_cvars(self, names: Iterable[str]) -> list[str]:
        names = set(names)
        return [v for v in self.cvars if v in names]

    def order_qvars(self, names: Iterable[str]) -> list[str]:
        names = set(names)
        return [q for q in self.qvars if q in names]

    def space(self, qnames: Iterable[str]) -> Space:
        regs = self.order_qvars(qnames)
        return Space(tuple(regs), tuple(self.qvars[q] for q in regs))

    def merged(self, other: "Decls") -> "Decls":
        out = Decls()
        for f in ("cvars", "qvars", "dists", "meas", "unitaries", "kets", "matrices"):
            d = dict(getattr(self, f))
            for k, v in getattr(other, f).items():
                if k in d and not _same(d[k], v):
                    raise DuplicateDecl(f"'{k}' declared differently in merged tables")
                d[k] = v
            setattr(out, f, d)
        return out


def _same(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.shape(a) == np.shape(b) and np.allclose(a, b)
    return a == b


def enumerate_envs(decls: Decls, names: Sequence[str], cap: int = 1_000_000) -> list[Env]:
    """All environments over the declared domains of ``names``."""
    names = list(names)
    ranges = [range(decls.domain(v)[0], decls.domain(v)[1] + 1) for v in names]
    size = 1
    for r in ranges:
        size *= len(r)
    if size > cap:
        raise DomainTooLarge(f"{size} environments exceed the enumeration cap {cap}")
    return [Env(dict(zip(names, vals))) for vals in itertools.product(*ranges)]


@dataclass
class Program:
    """A named command together with its variable sets and register space."""

    name: str
    body: Command
    decls: Decls
    extra_cvars: tuple = ()
    extra_qvars: tuple = ()

    @property
    def cvars(self) -> list[str]:
        return self.decls.order_cvars(classical_vars(self.body) | set(self.extra_cvars))

    @property
    def qvars(self) -> list[str]:
        return self.decls.order_qvars(quantum_vars(self.body) | set(self.extra_qvars))

    @property
    def space(self) -> Space:
        return self.decls.space(self.qvars)

    @property
    def qdim(self) -> int:
        return self.space.dim

    def envs(self, cap: int = 1_000_000) -> list[Env]:
        return enumerate_envs(self.decls, self.cvars, cap)
