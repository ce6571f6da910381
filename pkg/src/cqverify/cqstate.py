"""Classical environments, classical-quantum states and joint states."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Callable, Iterable

import numpy as np

from .errors import DimMismatch, NotPSD
from .opalg import INF, IVPredicate, _expect, as_op, hermitize, min_eig, partial_trace, trace_norm

EPS_TRACE = 1e-9
EPS_PRUNE = 1e-12


class Env(Mapping):
    """Immutable, hashable assignment of integers to classical variables."""

    __slots__ = ("_items", "_d", "_h")

    def __init__(self, bindings: Mapping[str, int] | Iterable | None = None, **kw):
        d = dict(bindings or {})
        d.update(kw)
        for k, v in d.items():
            if isinstance(v, bool):
                d[k] = int(v)
            elif not isinstance(v, (int, np.integer)):
                raise TypeError(f"value of {k} must be an integer, got {v!r}")
            else:
                d[k] = int(v)
        self._items = tuple(sorted(d.items()))
        self._d = dict(self._items)
        self._h = hash(self._items)

    def __getitem__(self, k: str) -> int:
        return self._d[k]

    def __iter__(self):
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __hash__(self) -> int:
        return self._h

    def __eq__(self, other) -> bool:
        if isinstance(other, Env):
            return self._items == other._items
        if isinstance(other, Mapping):
            return self._d == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return "{" + ", ".join(f"{k}={v}" for k, v in self._items) + "}"

    def set(self, name: str, value: int) -> "Env":
        d = dict(self._d)
        d[name] = int(value)
        return Env(d)

    def update(self, other: Mapping[str, int]) -> "Env":
        d = dict(self._d)
        d.update(other)
        return Env(d)

    def restrict(self, names: Iterable[str]) -> "Env":
        names = set(names)
        return Env({k: v for k, v in self._items if k in names})

    def to_json(self) -> dict:
        return dict(self._items)


EMPTY_ENV = Env()


def matrix_to_json(M: np.ndarray) -> list:
    M = np.asarray(M, dtype=complex)
    if M.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in M]
    return [[[float(z.real), float(z.imag)] for z in row] for row in M]


def _entry(x) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ValueError(f"complex entry must be [re, im], got {x!r}")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, str):
        return complex(x.replace("i", "j"))
    return complex(x)


def matrix_from_json(data) -> np.ndarray:
    """Parse a matrix literal: rows of [re, im] pairs (plain reals accepted)."""
    rows = [[_entry(x) for x in row] for row in data]
    M = np.array(rows, dtype=complex)
    if M.ndim != 2:
        raise DimMismatch("matrix literal must be two-dimensional")
    return M


def vector_from_json(data) -> np.ndarray:
    return np.array([_entry(x) for x in data], dtype=complex)


def ivp_from_json(data) -> IVPredicate:
    if isinstance(data, dict):
        P = matrix_from_json(data["finite"])
        X = matrix_from_json(data["inf_subspace"]) if "inf_subspace" in data else np.zeros_like(P)
        return IVPredicate.from_parts(P, X)
    return IVPredicate.bounded(matrix_from_json(data))


class CqState:
    """Finite-support map from environments to partial density operators."""

    __slots__ = ("qdim", "entries", "pruned")

    def __init__(self, qdim: int, entries: Mapping | None = None, pruned: float = 0.0,
                 check: bool = False, prune_tol: float = EPS_PRUNE):
        self.qdim = int(qdim)
        self.pruned = float(pruned)
        ents: dict = {}
        for env, rho in (entries or {}).items():
            if not isinstance(env, Env):
                env = Env(env)
            rho = as_op(rho)
            if rho.shape != (self.qdim, self.qdim):
                raise DimMismatch(f"state at {env} has shape {rho.shape}, qdim is {self.qdim}")
            if check:
                rho = hermitize(rho)
                if min_eig(rho) < -1e-9:
                    raise NotPSD(f"state at {env} is not positive semidefinite")
            t = float(np.trace(rho).real)
            if t < prune_tol:
                self.pruned += max(t, 0.0)
                continue
            if env in ents:
                ents[env] = ents[env] + rho
            else:
                ents[env] = rho
        self.entries = ents
        if check and self.trace() > 1 + EPS_TRACE:
            raise ValueError(f"total trace {self.trace()} exceeds 1")

    @classmethod
    def zero(cls, qdim: int) -> "CqState":
        return cls(qdim, {})

    @classmethod
    def simple(cls, env, rho) -> "CqState":
        rho = as_op(rho)
        return cls(rho.shape[0], {Env(env) if not isinstance(env, Env) else env: rho})

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def envs(self):
        return list(self.entries)

    def __getitem__(self, env) -> np.ndarray:
        if not isinstance(env, Env):
            env = Env(env)
        return self.entries.get(env, np.zeros((self.qdim, self.qdim), dtype=complex))

    def trace(self) -> float:
        return float(sum(np.trace(r).real for r in self.entries.values()))

    def __add__(self, other: "CqState") -> "CqState":
        if other.qdim != self.qdim:
            raise DimMismatch(f"qdim {self.qdim} vs {other.qdim}")
        ents = dict(self.entries)
        for env, rho in other.entries.items():
            ents[env] = ents[env] + rho if env in ents else rho
        return CqState(self.qdim, ents, self.pruned + other.pruned)

    def scale(self, c: float) -> "CqState":
        return CqState(self.qdim, {e: c * r for e, r in self.entries.items()}, c * self.pruned)

    def map_ops(self, f: Callable[[np.ndarray], np.ndarray], qdim: int | None = None) -> "CqState":
        return CqState(qdim or self.qdim, {e: f(r) for e, r in self.entries.items()}, self.pruned)

    def classical_dist(self) -> dict:
        """Distribution over environments (traces of the entries)."""
        return {e: float(np.trace(r).real) for e, r in self.entries.items()}

    def quantum_part(self) -> np.ndarray:
        """Sum over environments of the quantum states."""
        out = np.zeros((self.qdim, self.qdim), dtype=complex)
        for r in self.entries.values():
            out = out + r
        return out

    def marginal_vars(self, names: Iterable[str]) -> "CqState":
        names = set(names)
        ents: dict = {}
        for e, r in self.entries.items():
            k = e.restrict(names)
            ents[k] = ents[k] + r if k in ents else r
        return CqState(self.qdim, ents, self.pruned)

    def to_json(self) -> dict:
        return {"qdim": self.qdim,
                "entries": [{"env": e.to_json(), "rho": matrix_to_json(r)}
                            for e, r in sorted(self.entries.items(), key=lambda kv: kv[0]._items)]}

    @classmethod
    def from_json(cls, data: dict, check: bool = True) -> "CqState":
        qdim = int(data["qdim"])
        ents: dict = {}
        for item in data.get("entries", []):
            env = Env(item.get("env", {}))
            rho = matrix_from_json(item["rho"])
            ents[env] = ents[env] + rho if env in ents else rho
        return cls(qdim, ents, check=check)

    def __repr__(self) -> str:
        return f"CqState(qdim={self.qdim}, support={len(self.entries)}, trace={self.trace():.6g})"


def restrict(delta: CqState, b) -> CqState:
    """Keep exactly the entries whose environment satisfies b."""
    return CqState(delta.qdim, {e: r for e, r in delta.entries.items() if b(e)}, delta.pruned)


def state_distance(a: CqState, b: CqState) -> float:
    """Sum over the union of supports of the trace-norm differences."""
    if a.qdim != b.qdim:
        raise DimMismatch(f"qdim {a.qdim} vs {b.qdim}")
    total = 0.0
    for env in set(a.entries) | set(b.entries):
        total += trace_norm(a[env] - b[env])
    return total


def states_close(a: CqState, b: CqState, tol: float = 1e-9) -> bool:
    return state_distance(a, b) <= tol


def tv_distance(a: CqState, b: CqState) -> float:
    """Total-variation distance of the classical distributions."""
    pa, pb = a.classical_dist(), b.classical_dist()
    return 0.5 * sum(abs(pa.get(e, 0.0) - pb.get(e, 0.0)) for e in set(pa) | set(pb))


def expectation(delta: CqState, phi, eps: float = 1e-9) -> float:
    """sum over the support of tr(phi(env) rho); phi maps an Env to an IVPredicate."""
    total = 0.0
    for env, rho in delta.entries.items():
        A = phi(env)
        if A.dim != delta.qdim:
            raise DimMismatch(f"predicate dim {A.dim} vs state qdim {delta.qdim}")
        v = _expect(A, rho, eps)
        if v == INF:
            return INF
        total += v
    return total


class JointCqState(CqState):
    """CqState over the union of two disjoint variable sets and H1 (x) H2."""

    __slots__ = ("split", "vars1", "vars2")

    def __init__(self, split: tuple[int, int], vars1: Iterable[str], vars2: Iterable[str],
                 entries: Mapping | None = None, pruned: float = 0.0, check: bool = False):
        d1, d2 = int(split[0]), int(split[1])
        super().__init__(d1 * d2, entries, pruned, check=check)
        self.split = (d1, d2)
        self.vars1 = frozenset(vars1)
        self.vars2 = frozenset(vars2)
        if self.vars1 & self.vars2:
            raise ValueError(f"side variable sets overlap: {sorted(self.vars1 & self.vars2)}")

    @classmethod
    def simple(cls, env1, env2, rho, split) -> "JointCqState":
        env1, env2 = Env(env1), Env(env2)
        return cls(split, env1.keys(), env2.keys(), {env1.update(env2): as_op(rho)})

    def __add__(self, other: "CqState") -> "JointCqState":
        s = CqState.__add__(self, other)
        return JointCqState(self.split, self.vars1, self.vars2, s.entries, s.pruned)

    def scale(self, c: float) -> "JointCqState":
        return JointCqState(self.split, self.vars1, self.vars2,
                            {e: c * r for e, r in self.entries.items()}, c * self.pruned)

    def to_json(self) -> dict:
        out = super().to_json()
        out["split"] = list(self.split)
        out["vars1"] = sorted(self.vars1)
        out["vars2"] = sorted(self.vars2)
        return out


def joint_tr(delta: JointCqState, side: int) -> CqState:
    """Trace out ``side``: side 2 gives the side-1 marginal and vice versa."""
    d1, d2 = delta.split
    keep = delta.vars1 if side == 2 else delta.vars2
    qd = d1 if side == 2 else d2
    ents: dict = {}
    for env, rho in delta.entries.items():
        k = env.restrict(keep)
        m = partial_trace(rho, side, (d1, d2))
        ents[k] = ents[k] + m if k in ents else m
    return CqState(qd, ents)


def product_state(d1: CqState, d2: CqState, vars1=None, vars2=None) -> JointCqState:
    vars1 = set(vars1 or ()) | {k for e in d1.entries for k in e}
    vars2 = set(vars2 or ()) | {k for e in d2.entries for k in e}
    ents = {}
    for e1, r1 in d1.entries.items():
        for e2, r2 in d2.entries.items():
            ents[e1.update(e2)] = np.kron(r1, r2)
    return JointCqState((d1.qdim, d2.qdim), vars1, vars2, ents)


def is_coupling(delta: JointCqState, d1: CqState, d2: CqState, tol: float = 1e-8) -> bool:
    """Both marginals match env-wise within trace-norm tol."""
    if delta.split != (d1.qdim, d2.qdim):
        raise DimMismatch(f"split {delta.split} vs marginal dims {(d1.qdim, d2.qdim)}")
    m1 = joint_tr(delta, 2)
    m2 = joint_tr(delta, 1)
    for m, d in ((m1, d1), (m2, d2)):
        for env in set(m.entries) | set(d.entries):
            if trace_norm(m[env] - d[env]) > tol:
                return False
    return True


def ivp_dim_check(A: IVPredicate, qdim: int):
    if A.dim != qdim:
        raise DimMismatch(f"predicate dim {A.dim} vs qdim {qdim}")
