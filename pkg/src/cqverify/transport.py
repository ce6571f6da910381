"""Classical-quantum optimal transport: couplings of two cq-states minimizing E[phi].

Primal: minimize sum_ij tr(phi_ij X_ij) over PSD blocks X_ij (one per pair of
environments) whose partial traces reproduce the marginals. Dual: maximize
sum_i tr(psi1_i rho1_i) + sum_j tr(psi2_j rho2_j) subject to
psi1_i (x) I + I (x) psi2_j below phi_ij. Diagonal instances are solved
exactly as linear programs; the general case uses a first-order ADMM on the
dual (augmented Lagrangian with the primal as multiplier), followed by
explicit repair of both iterates so that the reported values bracket the
optimum with exactly feasible witnesses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .cqstate import CqState, Env, JointCqState, ivp_from_json, matrix_from_json, matrix_to_json
from .errors import CapExceeded, DimMismatch, MassMismatch, SolverDiverged
from .opalg import (IVPredicate, dag, eigh, hermitize, ivp_trunc, op_norm, subspace_basis,
                    support)

TRACE_TOL = 1e-9
DIAG_TOL = 1e-12


# ---------------------------------------------------------------------------
# data types


@dataclass
class TransportInstance:
    """Marginals delta1, delta2 and a cost phi(env1, env2) on the joint register space."""

    delta1: CqState
    delta2: CqState
    phi: Callable[[Env, Env], IVPredicate]
    trunc: float | None = None
    name: str = ""

    @property
    def dims(self) -> tuple[int, int]:
        return self.delta1.qdim, self.delta2.qdim

    @classmethod
    def from_assertion(cls, delta1: CqState, delta2: CqState, A, space, trunc=None, name=""):
        from .assertions import Evaluator
        ev = Evaluator(space)
        return cls(delta1, delta2, lambda e1, e2: ev(A, Env(e1).update(e2)), trunc, name)

    @classmethod
    def from_blocks(cls, delta1: CqState, delta2: CqState, blocks: Mapping, trunc=None, name=""):
        """blocks maps (env1, env2) to an IVPredicate or a bounded Hermitian matrix."""
        tab = {}
        for (e1, e2), v in blocks.items():
            tab[(Env(e1), Env(e2))] = v if isinstance(v, IVPredicate) else IVPredicate.bounded(v)
        return cls(delta1, delta2, lambda e1, e2: tab[(Env(e1), Env(e2))], trunc, name)

    def to_json(self) -> dict:
        e1s, e2s = list(self.delta1.envs()), list(self.delta2.envs())
        return {
            "delta1": self.delta1.to_json(),
            "delta2": self.delta2.to_json(),
            "phi": {"table": [{"env1": e1.to_json(), "env2": e2.to_json(),
                               "pred": self.phi(e1, e2).to_json()} for e1 in e1s for e2 in e2s]},
            "trunc": self.trunc,
        }

    @classmethod
    def from_json(cls, data: dict, decls=None, space=None) -> "TransportInstance":
        d1 = CqState.from_json(data["delta1"])
        d2 = CqState.from_json(data["delta2"])
        phi = data["phi"]
        if "table" in phi:
            blocks = {}
            for row in phi["table"]:
                p = row["pred"]
                pred = ivp_from_json(p) if isinstance(p, dict) else IVPredicate.bounded(matrix_from_json(p))
                blocks[(Env(row["env1"]), Env(row["env2"]))] = pred
            return cls.from_blocks(d1, d2, blocks, data.get("trunc"))
        if "assertion" in phi:
            from .assertions import parse_assertion
            if decls is None or space is None:
                raise ValueError("an assertion-valued phi needs declarations and a register space")
            A = parse_assertion(phi["assertion"], decls)
            return cls.from_assertion(d1, d2, A, space, data.get("trunc"))
        raise ValueError("phi must contain 'table' or 'assertion'")


@dataclass
class DualCandidate:
    psi1: dict  # Env -> Hermitian matrix (d1 x d1)
    psi2: dict  # Env -> Hermitian matrix (d2 x d2)
    n: float | None = None

    def norms(self) -> tuple[float, float]:
        n1 = max((op_norm(M) for M in self.psi1.values()), default=0.0)
        n2 = max((op_norm(M) for M in self.psi2.values()), default=0.0)
        return n1, n2

    def to_json(self) -> dict:
        return {"psi1": [{"env": e.to_json(), "op": matrix_to_json(M)} for e, M in self.psi1.items()],
                "psi2": [{"env": e.to_json(), "op": matrix_to_json(M)} for e, M in self.psi2.items()],
                "n": self.n}

    @classmethod
    def from_json(cls, data: dict) -> "DualCandidate":
        return cls({Env(r["env"]): matrix_from_json(r["op"]) for r in data["psi1"]},
                   {Env(r["env"]): matrix_from_json(r["op"]) for r in data["psi2"]}, data.get("n"))


@dataclass
class TransportResult:
    primal_value: float
    coupling: JointCqState | None
    dual: DualCandidate | None
    dual_value: float
    gap: float
    status: str  # "Certified" or "BestEffort"
    method: str = ""
    iters: int = 0
    lower_bound_only: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == "Certified"

    def to_json(self) -> dict:
        return {
            "primalValue": _num(self.primal_value),
            "dualValue": _num(self.dual_value),
            "gap": _num(self.gap),
            "status": self.status,
            "method": self.method,
            "iters": self.iters,
            "lowerBoundOnly": self.lower_bound_only,
            "coupling": self.coupling.to_json() if self.coupling is not None else None,
            "dual": self.dual.to_json() if self.dual is not None else None,
            "diagnostics": self.diagnostics,
        }


def _num(x: float):
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


# ---------------------------------------------------------------------------
# exact classical transport


def classical_ot(mu1, mu2, cost, tol: float = 1e-9):
    """Exact transport LP; returns (value, plan, u, v) with u_i + v_j <= cost_ij.

    Infinite costs forbid a cell; an infeasible problem has value inf and plan None.
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    C = np.asarray(cost, dtype=float)
    if C.shape != (len(mu1), len(mu2)):
        raise DimMismatch(f"cost {C.shape} vs marginals {len(mu1)}, {len(mu2)}")
    if np.any(mu1 < -tol) or np.any(mu2 < -tol):
        raise ValueError("marginals must be non-negative")
    if abs(mu1.sum() - mu2.sum()) > tol:
        raise MassMismatch(f"marginal masses differ: {mu1.sum():.12g} vs {mu2.sum():.12g}")
    rows = np.flatnonzero(mu1 > 0)
    cols = np.flatnonzero(mu2 > 0)
    n, m = len(mu1), len(mu2)
    plan = np.zeros((n, m))
    if len(rows) == 0 or len(cols) == 0:
        return 0.0, plan, np.zeros(n), np.zeros(m)
    sub = C[np.ix_(rows, cols)]
    ok = np.isfinite(sub)
    cells = np.argwhere(ok)
    if len(cells) == 0:
        return float("inf"), None, np.zeros(n), np.zeros(m)
    nr, nc = len(rows), len(cols)
    A = np.zeros((nr + nc, len(cells)))
    A[cells[:, 0], np.arange(len(cells))] = 1
    A[nr + cells[:, 1], np.arange(len(cells))] = 1
    b = np.concatenate([mu1[rows], mu2[cols]])
    # drop one redundant equality: total masses already agree
    res = linprog(sub[ok], A_eq=A[:-1], b_eq=b[:-1], bounds=(0, None), method="highs")
    if res.status == 2:
        return float("inf"), None, np.zeros(n), np.zeros(m)
    if res.status != 0:
        raise SolverDiverged(f"linear program failed: {res.message}")
    sub_plan = np.zeros((nr, nc))
    sub_plan[ok] = res.x
    plan[np.ix_(rows, cols)] = sub_plan
    y = np.concatenate([res.eqlin.marginals, [0.0]])
    u = np.zeros(n)
    v = np.zeros(m)
    u[rows] = y[:nr]
    v[cols] = y[nr:]
    # extend the potentials to zero-mass rows and columns, keeping u_i + v_j <= c_ij
    for j in range(m):
        if mu2[j] <= 0:
            vals = C[rows, j] - u[rows]
            vals = vals[np.isfinite(vals)]
            v[j] = vals.min() if vals.size else 0.0
    for i in range(n):
        if mu1[i] <= 0:
            vals = C[i, :] - v
            vals = vals[np.isfinite(vals)]
            u[i] = vals.min() if vals.size else 0.0
    value = float(sub[ok] @ res.x)
    return value, plan, u, v


# ---------------------------------------------------------------------------
# block operators


def _partial_traces(X: np.ndarray, d1: int, d2: int):
    """Marginal maps: (sum_j tr_2 X_ij, sum_i tr_1 X_ij)."""
    n1, n2 = X.shape[:2]
    X6 = X.reshape(n1, n2, d1, d2, d1, d2)
    return np.einsum("ijabcb->iac", X6), np.einsum("ijabae->jbe", X6)


def _adjoint(Y1: np.ndarray, Y2: np.ndarray, d1: int, d2: int) -> np.ndarray:
    """Blocks Y1_i (x) I + I (x) Y2_j."""
    n1, n2 = len(Y1), len(Y2)
    I1, I2 = np.eye(d1), np.eye(d2)
    K1 = np.einsum("iac,bd->iabcd", Y1, I2).reshape(n1, 1, d1 * d2, d1 * d2)
    K2 = np.einsum("ac,jbd->jabcd", I1, Y2).reshape(1, n2, d1 * d2, d1 * d2)
    return K1 + K2


def _solve_normal(R1: np.ndarray, R2: np.ndarray, d1: int, d2: int):
    """Solve A A^* (Y1, Y2) = (R1, R2) in closed form (one gauge freedom is fixed)."""
    n1, n2 = len(R1), len(R2)
    s1 = float(np.real(np.einsum("iaa->", R1)))
    T1 = s1 / (n2 * d2)
    Y1 = hermitize_stack(R1) / (n2 * d2)
    Y2 = (hermitize_stack(R2) - T1 * np.eye(d2)) / (n1 * d1)
    # remove the component along the null direction (I, -I)
    a = float(np.real(np.einsum("iaa->", Y1) - np.einsum("jbb->", Y2))) / (n1 * d1 + n2 * d2)
    return Y1 - a * np.eye(d1), Y2 + a * np.eye(d2)


def _herm_eig(M: np.ndarray):
    return np.linalg.eigh(hermitize(M) if M.ndim == 2 else (M + np.conj(np.swapaxes(M, -1, -2))) / 2)


def _psd_part(M: np.ndarray) -> np.ndarray:
    w, V = _herm_eig(M)
    w = np.maximum(w, 0)
    return np.einsum("...ik,...k,...jk->...ij", V, w, V.conj())


# ---------------------------------------------------------------------------
# instance preparation


@dataclass
class _Prepared:
    envs1: list
    envs2: list
    R1: np.ndarray      # (n1, d1, d1)
    R2: np.ndarray      # (n2, d2, d2)
    C: np.ndarray       # (n1, n2, D, D) finite costs
    Pi: np.ndarray | None  # (n1, n2, D, D) allowed-support projectors, or None for full
    d1: int
    d2: int
    mass: float
    bounded: bool
    phi_norm: float
    diagonal: bool
    inf_diag: np.ndarray | None  # (n1, n2, D) True where the cost is infinite (diagonal case)


def _prepare(inst: TransportInstance, cap: int, restrict: bool) -> _Prepared:
    d1, d2 = inst.dims
    envs1 = list(inst.delta1.envs())
    envs2 = list(inst.delta2.envs())
    n1, n2 = len(envs1), len(envs2)
    if n1 * n2 * d1 * d2 > cap:
        raise CapExceeded(f"joint size {n1}*{n2}*{d1}*{d2} exceeds the cap {cap}")
    t1, t2 = inst.delta1.trace(), inst.delta2.trace()
    if abs(t1 - t2) > TRACE_TOL:
        raise MassMismatch(f"marginal traces differ: {t1:.12g} vs {t2:.12g}")
    R1 = np.array([inst.delta1[e] for e in envs1], dtype=complex).reshape(n1, d1, d1)
    R2 = np.array([inst.delta2[e] for e in envs2], dtype=complex).reshape(n2, d2, d2)
    D = d1 * d2
    C = np.zeros((n1, n2, D, D), dtype=complex)
    Pi = np.zeros((n1, n2, D, D), dtype=complex) if restrict else None
    bounded = True
    phi_norm = 0.0
    diagonal = _is_diag(R1) and _is_diag(R2)
    inf_diag = np.zeros((n1, n2, D), dtype=bool)
    supp1 = [support(r) for r in R1] if restrict else None
    supp2 = [support(r) for r in R2] if restrict else None
    for i, e1 in enumerate(envs1):
        for j, e2 in enumerate(envs2):
            A = inst.phi(e1, e2)
            if A.dim != D:
                raise DimMismatch(f"cost of dim {A.dim} for joint dim {D}")
            if not A.is_bounded:
                bounded = False
            if restrict:
                C[i, j] = A.finite
                allowed = (np.eye(D) - A.inf) if not A.is_bounded else np.eye(D)
                Pi[i, j] = _meet(allowed, np.kron(supp1[i], supp2[j]))
                inf_diag[i, j] = np.real(np.diag(A.inf)) > 0.5
                if diagonal and not _is_diag(A.inf[None]):
                    diagonal = False
            else:
                if not A.is_bounded:
                    if inst.trunc is None:
                        raise ValueError("cost has infinite parts; supply a truncation level")
                    C[i, j] = ivp_trunc(A, inst.trunc)
                else:
                    C[i, j] = A.finite
            phi_norm = max(phi_norm, op_norm(C[i, j]))
            if diagonal and not _is_diag(C[i, j][None]):
                diagonal = False
    return _Prepared(envs1, envs2, R1, R2, C, Pi, d1, d2, t1, bounded, phi_norm, diagonal,
                     inf_diag if restrict else None)


def _is_diag(M: np.ndarray) -> bool:
    off = M - np.einsum("...ii->...i", M)[..., None] * np.eye(M.shape[-1])
    return float(np.max(np.abs(off), initial=0.0)) <= DIAG_TOL


def _meet(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Projection onto range(P) intersect range(Q)."""
    # the intersection is the eigenvalue-1 eigenspace of P Q P
    w, V = np.linalg.eigh(hermitize(P @ Q @ P))
    B = V[:, w > 1 - 1e-7]
    return B @ dag(B)


# ---------------------------------------------------------------------------
# dual side


def dual_violation(prep: _Prepared, Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
    """Per-block min eigenvalue of phi_ij - Y1_i (x) I - I (x) Y2_j (compressed if restricted)."""
    G = prep.C - _adjoint(Y1, Y2, prep.d1, prep.d2)
    n1, n2 = G.shape[:2]
    out = np.zeros((n1, n2))
    for i in range(n1):
        for j in range(n2):
            g = G[i, j]
            if prep.Pi is not None:
                B = subspace_basis(prep.Pi[i, j])
                if B.shape[1] == 0:
                    out[i, j] = np.inf
                    continue
                g = dag(B) @ g @ B
            out[i, j] = float(np.linalg.eigvalsh(hermitize(g))[0])
    return out


def _dual_value(prep: _Prepared, Y1, Y2) -> float:
    return float(np.real(np.einsum("iab,iba->", Y1, prep.R1) + np.einsum("jab,jba->", Y2, prep.R2)))


def _repair_dual(prep: _Prepared, Y1: np.ndarray, Y2: np.ndarray, eps: float):
    """Make the dual exactly feasible and bring it within the norm bound."""
    Y1, Y2 = hermitize_stack(Y1), hermitize_stack(Y2)
    viol = dual_violation(prep, Y1, Y2)
    shift = np.maximum(0.0, -np.min(np.where(np.isfinite(viol), viol, np.inf), axis=1))
    shift = np.where(np.isfinite(shift), shift, 0.0)
    Y1 = Y1 - shift[:, None, None] * np.eye(prep.d1)
    # balance: move the common level of psi2 onto psi1 (value unchanged for equal masses)
    lam = max(float(np.linalg.eigvalsh(y)[-1]) for y in Y2) if len(Y2) else 0.0
    Y1 = Y1 + lam * np.eye(prep.d1)
    Y2 = Y2 - lam * np.eye(prep.d2)
    bound = norm_bound(prep.phi_norm, eps)
    if _max_norm(Y1, Y2) > bound * (1 + 1e-12):
        C1 = _clip_below(Y1 - eps / 2 * np.eye(prep.d1), -bound)
        C2 = _clip_below(Y2, -bound)
        v = dual_violation(prep, C1, C2)
        if np.min(v) >= -1e-12 and _max_norm(C1, C2) <= bound * (1 + 1e-12):
            Y1, Y2 = C1, C2
        else:
            # canonical feasible point: psi1 = -||phi|| I, psi2 = 0
            Y1 = np.stack([-prep.phi_norm * np.eye(prep.d1, dtype=complex)] * len(Y1))
            Y2 = np.zeros_like(Y2)
    return Y1, Y2


def hermitize_stack(Y: np.ndarray) -> np.ndarray:
    return (Y + np.conj(np.swapaxes(Y, -1, -2))) / 2


def _clip_below(Y: np.ndarray, lo: float) -> np.ndarray:
    w, V = _herm_eig(Y)
    w = np.maximum(w, lo)
    return np.einsum("...ik,...k,...jk->...ij", V, w, V.conj())


def _max_norm(Y1, Y2) -> float:
    n = 0.0
    for y in list(Y1) + list(Y2):
        n = max(n, op_norm(y))
    return n


def norm_bound(phi_norm: float, eps: float) -> float:
    """||phi|| + (2/eps) ||phi||^2."""
    return phi_norm + 2.0 * phi_norm ** 2 / eps


# ---------------------------------------------------------------------------
# primal side


def _primal_value(prep: _Prepared, X: np.ndarray) -> float:
    return float(np.real(np.einsum("ijab,ijba->", prep.C, X)))


def _repair_primal_full(prep: _Prepared, X: np.ndarray) -> np.ndarray:
    """Exactly feasible coupling near X: linear correction then mixing with the product."""
    d1, d2, m = prep.d1, prep.d2, prep.mass
    if m <= 0:
        return np.zeros_like(X)
    P1 = np.stack([support(r) for r in prep.R1])
    P2 = np.stack([support(r) for r in prep.R2])
    Pi = np.einsum("iac,jbd->ijabcd", P1, P2).reshape(X.shape)
    X = Pi @ X @ Pi
    X = (X + np.conj(np.swapaxes(X, -1, -2))) / 2
    M1, M2 = _partial_traces(X, d1, d2)
    E1, E2 = prep.R1 - M1, prep.R2 - M2
    s = float(np.real(np.einsum("iaa->", E1)))
    prod = np.einsum("iac,jbd->ijabcd", prep.R1, prep.R2).reshape(X.shape) / m
    corr = (np.einsum("iac,jbd->ijabcd", E1, prep.R2) + np.einsum("iac,jbd->ijabcd", prep.R1, E2)
            ).reshape(X.shape) / m
    X = X + corr - (s / m) * prod
    # smallest t with (1 - t) X + t prod PSD, using the product's support
    worst = 0.0
    n1, n2 = X.shape[:2]
    for i in range(n1):
        for j in range(n2):
            P = prod[i, j]
            w, V = np.linalg.eigh(hermitize(P))
            keep = w > 1e-14 * max(1.0, w.max(initial=0.0))
            if not np.any(keep):
                continue
            W = V[:, keep] / np.sqrt(w[keep])
            g = np.linalg.eigvalsh(hermitize(dag(W) @ X[i, j] @ W))[0]
            worst = min(worst, g)
    if worst < 0:
        t = -worst / (1 - worst)
        X = (1 - t) * X + t * prod
    return X


def _repair_primal_restricted(prep: _Prepared, X: np.ndarray, iters: int = 500, tol: float = 1e-11):
    """Alternating projections between the marginal constraints and the allowed PSD cone."""
    d1, d2 = prep.d1, prep.d2
    Pi = prep.Pi
    n1, n2, D, _ = X.shape
    # normal operator of the restricted map, built once
    basis1 = _herm_basis(d1)
    basis2 = _herm_basis(d2)
    m = n1 * len(basis1) + n2 * len(basis2)

    def unvec(y):
        Y1 = np.einsum("ik,kab->iab", y[:n1 * len(basis1)].reshape(n1, -1), basis1)
        Y2 = np.einsum("jk,kab->jab", y[n1 * len(basis1):].reshape(n2, -1), basis2)
        return Y1, Y2

    def vec(Y1, Y2):
        return np.concatenate([np.real(np.einsum("iab,kba->ik", Y1, basis1)).ravel(),
                               np.real(np.einsum("jab,kba->jk", Y2, basis2)).ravel()])

    def A(Z):
        return _partial_traces(Pi @ Z @ Pi, d1, d2)

    def At(Y1, Y2):
        return Pi @ _adjoint(Y1, Y2, d1, d2) @ Pi

    N = np.zeros((m, m))
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1
        N[:, k] = vec(*A(At(*unvec(e))))
    Np = np.linalg.pinv(N, rcond=1e-10)
    b = vec(prep.R1, prep.R2)
    err = np.inf
    for _ in range(iters):
        r = b - vec(*A(X))
        err = float(np.max(np.abs(r), initial=0.0))
        X = X + At(*unvec(Np @ r))
        Xp = _psd_part(Pi @ X @ Pi)
        if err < tol and float(np.max(np.abs(Xp - X), initial=0.0)) < tol:
            X = Xp
            break
        X = Xp
    r = b - vec(*A(X))
    return X, float(np.max(np.abs(r), initial=0.0))


def _herm_basis(d: int) -> np.ndarray:
    """Orthonormal basis of d x d Hermitian matrices under <A, B> = tr(AB)."""
    out = []
    for a in range(d):
        E = np.zeros((d, d), dtype=complex)
        E[a, a] = 1
        out.append(E)
    for a in range(d):
        for b in range(a + 1, d):
            E = np.zeros((d, d), dtype=complex)
            E[a, b] = E[b, a] = 1 / np.sqrt(2)
            out.append(E)
            F = np.zeros((d, d), dtype=complex)
            F[a, b] = -1j / np.sqrt(2)
            F[b, a] = 1j / np.sqrt(2)
            out.append(F)
    return np.array(out)


# ---------------------------------------------------------------------------
# ADMM on the dual


def _admm(prep: _Prepared, tol: float, max_iters: int, check_every: int = 25):
    d1, d2 = prep.d1, prep.d2
    scale = prep.phi_norm if prep.phi_norm > 0 else 1.0
    C = prep.C / scale
    R1, R2 = prep.R1, prep.R2
    Pi = prep.Pi
    m = prep.mass
    X = np.einsum("iac,jbd->ijabcd", R1, R2).reshape(C.shape) / m
    if Pi is not None:
        X = Pi @ X @ Pi
    S = np.zeros_like(C)
    Y1 = np.zeros_like(R1)
    Y2 = np.zeros_like(R2)
    mu = 1.0
    bnorm = 1 + np.sqrt(np.sum(np.abs(R1) ** 2) + np.sum(np.abs(R2) ** 2))
    cnorm = 1 + np.sqrt(np.sum(np.abs(C) ** 2))
    best = None
    it = 0
    hist = []
    for it in range(1, max_iters + 1):
        M1, M2 = _partial_traces(X, d1, d2)
        Q1, Q2 = _partial_traces(S - C, d1, d2)
        Y1, Y2 = _solve_normal(mu * (R1 - M1) - Q1, mu * (R2 - M2) - Q2, d1, d2)
        Aty = _adjoint(Y1, Y2, d1, d2)
        V = C - Aty - mu * X
        if Pi is None:
            Xn = _psd_part(-V) / mu
        else:
            Xn = _psd_part(Pi @ (-V) @ Pi) / mu
        S = V + mu * Xn
        dx = Xn - X
        X = Xn
        if it % 5 == 0:
            M1, M2 = _partial_traces(X, d1, d2)
            pinf = np.sqrt(np.sum(np.abs(M1 - R1) ** 2) + np.sum(np.abs(M2 - R2) ** 2)) / bnorm
            dinf = mu * np.sqrt(np.sum(np.abs(dx) ** 2)) / cnorm
            hist.append((pinf, dinf))
            if pinf > 4 * dinf:
                mu = min(mu * 1.3, 1e6)
            elif dinf > 4 * pinf:
                mu = max(mu / 1.3, 1e-6)
        if it % check_every == 0 or it == max_iters:
            cert = _certify(prep, X * 1.0, Y1 * scale, Y2 * scale, tol)
            if best is None or cert["gap"] < best["gap"]:
                best = cert
                best["iters"] = it
            if cert["gap"] <= tol * 0.5:
                break
    return best, it


def _certify(prep: _Prepared, X, Y1, Y2, tol):
    eps = max(tol, 1e-12)
    P1, P2 = _repair_dual(prep, Y1, Y2, eps)
    dval = _dual_value(prep, P1, P2)
    if prep.Pi is None:
        Xr = _repair_primal_full(prep, X)
        err = 0.0
    else:
        Xr, err = _repair_primal_restricted(prep, X)
    pval = _primal_value(prep, Xr)
    return {"X": Xr, "Y1": P1, "Y2": P2, "primal": pval, "dual": dval, "gap": pval - dval,
            "marginal_error": err}


# ---------------------------------------------------------------------------
# public solvers


def _coupling_state(prep: _Prepared, inst: TransportInstance, X: np.ndarray) -> JointCqState:
    entries = {}
    for i, e1 in enumerate(prep.envs1):
        for j, e2 in enumerate(prep.envs2):
            blk = hermitize(X[i, j])
            if np.real(np.trace(blk)) > 1e-15:
                entries[Env(e1).update(e2)] = blk
    vars1 = sorted({v for e in prep.envs1 for v in e})
    vars2 = sorted({v for e in prep.envs2 for v in e})
    return JointCqState((prep.d1, prep.d2), vars1, vars2, entries, check=False)


def _dual_candidate(prep: _Prepared, Y1, Y2) -> DualCandidate:
    return DualCandidate({e: hermitize(Y1[i]) for i, e in enumerate(prep.envs1)},
                         {e: hermitize(Y2[j]) for j, e in enumerate(prep.envs2)})


def _solve_diagonal(prep: _Prepared, inst: TransportInstance, tol: float) -> TransportResult:
    d1, d2 = prep.d1, prep.d2
    n1, n2 = len(prep.envs1), len(prep.envs2)
    mu1 = np.real(np.einsum("iaa->ia", prep.R1)).ravel()
    mu2 = np.real(np.einsum("jbb->jb", prep.R2)).ravel()
    mu1 = np.maximum(mu1, 0)
    mu2 = np.maximum(mu2, 0)
    diagC = np.real(np.einsum("ijaa->ija", prep.C)).reshape(n1, n2, d1, d2)
    cost = np.transpose(diagC, (0, 2, 1, 3)).reshape(n1 * d1, n2 * d2)
    if prep.inf_diag is not None:
        infm = np.transpose(prep.inf_diag.reshape(n1, n2, d1, d2), (0, 2, 1, 3)).reshape(n1 * d1, n2 * d2)
        cost = np.where(infm, np.inf, cost)
    # rescale so the masses agree to rounding
    mu2 = mu2 * (mu1.sum() / mu2.sum()) if mu2.sum() > 0 else mu2
    val, plan, u, v = classical_ot(mu1, mu2, cost, tol=max(TRACE_TOL, 1e-9))
    if plan is None:
        return TransportResult(float("inf"), None, None, float("inf"), 0.0, "Certified", "lp",
                               diagnostics={"infeasible": True})
    plan4 = plan.reshape(n1, d1, n2, d2)
    X = np.zeros((n1, n2, d1 * d2, d1 * d2), dtype=complex)
    idx = np.arange(d1 * d2)
    for i in range(n1):
        for j in range(n2):
            X[i, j, idx, idx] = plan4[i, :, j, :].ravel()
    U = u.reshape(n1, d1)
    Vv = v.reshape(n2, d2)
    Y1 = np.stack([np.diag(U[i]).astype(complex) for i in range(n1)])
    Y2 = np.stack([np.diag(Vv[j]).astype(complex) for j in range(n2)])
    if prep.Pi is None or prep.bounded:
        Y1, Y2 = _repair_dual(prep, Y1, Y2, max(tol, 1e-12))
    dval = _dual_value(prep, Y1, Y2)
    gap = val - dval
    status = "Certified" if gap <= tol else "BestEffort"
    return TransportResult(val, _coupling_state(prep, inst, X), _dual_candidate(prep, Y1, Y2), dval,
                           gap, status, "lp", 0, bool(not prep.bounded and prep.Pi is None))


def primal_solve(inst: TransportInstance, tol: float = 1e-4, max_iters: int = 20_000,
                 cap: int = 4096, force_sdp: bool = False) -> TransportResult:
    """min over couplings of E[phi], with a dual certificate.

    Infinite-valued costs are truncated at inst.trunc; the result is then a
    lower bound on the untruncated optimum (flagged lower_bound_only).
    """
    prep = _prepare(inst, cap, restrict=False)
    if prep.mass <= 0:
        return TransportResult(0.0, _coupling_state(prep, inst, np.zeros_like(prep.C)),
                               _dual_candidate(prep, np.zeros_like(prep.R1), np.zeros_like(prep.R2)),
                               0.0, 0.0, "Certified", "trivial")
    if prep.diagonal and not force_sdp:
        res = _solve_diagonal(prep, inst, tol)
        res.lower_bound_only = not prep.bounded
        return res
    cert, it = _admm(prep, tol, max_iters)
    status = "Certified" if cert["gap"] <= tol else "BestEffort"
    return TransportResult(cert["primal"], _coupling_state(prep, inst, cert["X"]),
                           _dual_candidate(prep, cert["Y1"], cert["Y2"]), cert["dual"], cert["gap"],
                           status, "admm", cert.get("iters", it), not prep.bounded,
                           {"phiNorm": prep.phi_norm})


def solve_ivp(inst: TransportInstance, tol: float = 1e-4, max_iters: int = 20_000,
              cap: int = 4096) -> TransportResult:
    """Exact-support variant for infinite-valued costs.

    Couplings are restricted to the complement of the infinite subspaces (and the
    marginal supports), so finite optima are found without truncation. An
    infeasible restriction means the optimum is +inf.
    """
    prep = _prepare(inst, cap, restrict=True)
    if prep.mass <= 0:
        return TransportResult(0.0, None, None, 0.0, 0.0, "Certified", "trivial")
    if prep.diagonal:
        return _solve_diagonal(prep, inst, tol)
    cert, it = _admm(prep, tol, max_iters)
    if cert["marginal_error"] > 1e-6:
        return TransportResult(float("inf"), None, None, cert["dual"], float("inf"), "BestEffort",
                               "admm-restricted", it,
                               diagnostics={"marginalError": cert["marginal_error"],
                                            "note": "no coupling found on the finite subspace"})
    status = "Certified" if cert["gap"] <= tol else "BestEffort"
    return TransportResult(cert["primal"], _coupling_state(prep, inst, cert["X"]),
                           _dual_candidate(prep, cert["Y1"], cert["Y2"]), cert["dual"], cert["gap"],
                           status, "admm-restricted", cert.get("iters", it),
                           diagnostics={"marginalError": cert["marginal_error"]})


def dual_check(inst: TransportInstance, cand: DualCandidate, tol: float = 1e-8,
               cap: int = 4096) -> tuple[bool, float]:
    """(feasible, value) of a dual candidate; feasibility over every env pair."""
    prep = _prepare(inst, cap, restrict=inst.trunc is None)
    d1, d2 = prep.d1, prep.d2
    try:
        Y1 = np.stack([np.asarray(cand.psi1[e], dtype=complex) for e in prep.envs1])
        Y2 = np.stack([np.asarray(cand.psi2[e], dtype=complex) for e in prep.envs2])
    except KeyError as exc:
        raise DimMismatch(f"dual candidate has no operator for environment {exc}") from None
    if Y1.shape[1:] != (d1, d1) or Y2.shape[1:] != (d2, d2):
        raise DimMismatch("dual candidate operator dimensions do not match the marginals")
    viol = dual_violation(prep, Y1, Y2)
    value = _dual_value(prep, Y1, Y2)
    return bool(np.min(viol) >= -tol), value


def norm_bound_check(inst: TransportInstance, eps: float, cand: DualCandidate,
                     phi_norm: float | None = None) -> bool:
    """max(||psi1||, ||psi2||) <= ||phi|| + (2/eps) ||phi||^2."""
    if phi_norm is None:
        prep = _prepare(inst, 10 ** 9, restrict=False)
        phi_norm = prep.phi_norm
    n1, n2 = cand.norms()
    return max(n1, n2) <= norm_bound(phi_norm, eps) * (1 + 1e-12) + 1e-12


def product_value(inst: TransportInstance) -> float:
    """E over the product coupling, an upper bound on the optimum."""
    from .opalg import ivp_expect
    total = 0.0
    m = inst.delta1.trace()
    for e1, r1 in inst.delta1.items():
        for e2, r2 in inst.delta2.items():
            A = inst.phi(e1, e2)
            if not A.is_bounded and inst.trunc is not None:
                A = IVPredicate.bounded(ivp_trunc(A, inst.trunc), check=False)
            total += ivp_expect(A, np.kron(r1, r2) / m, check=False)
    return total


def coupling_expectation(inst: TransportInstance, coupling: JointCqState) -> float:
    from .opalg import ivp_expect
    total = 0.0
    vars1 = set(coupling.vars1)
    for env, rho in coupling.items():
        e1 = Env({k: v for k, v in env.items() if k in vars1})
        e2 = Env({k: v for k, v in env.items() if k not in vars1})
        A = inst.phi(e1, e2)
        if not A.is_bounded and inst.trunc is not None:
            A = IVPredicate.bounded(ivp_trunc(A, inst.trunc), check=False)
        total += ivp_expect(A, rho, check=False)
    return total


def to_y_form(cand: DualCandidate) -> DualCandidate:
    """Shift a Z-form dual (psi1, psi2) to PSD parts: phi_i = psi_i + a_i I, n = a_1 + a_2."""
    a1 = max(0.0, -min((np.linalg.eigvalsh(hermitize(M))[0] for M in cand.psi1.values()), default=0.0))
    a2 = max(0.0, -min((np.linalg.eigvalsh(hermitize(M))[0] for M in cand.psi2.values()), default=0.0))
    p1 = {e: M + a1 * np.eye(M.shape[0]) for e, M in cand.psi1.items()}
    p2 = {e: M + a2 * np.eye(M.shape[0]) for e, M in cand.psi2.items()}
    return DualCandidate(p1, p2, a1 + a2)


def y_membership(phi1: IVPredicate, phi2: IVPredicate, n: float, phi: IVPredicate,
                 d1: int, d2: int, tol: float = 1e-8) -> bool:
    """phi1 (x) I + I (x) phi2 below phi + n I, with phi1, phi2 bounded PSD."""
    from .opalg import ivp_add, ivp_leq, ivp_tensor
    lhs = ivp_add(ivp_tensor(phi1, IVPredicate.identity(d2)), ivp_tensor(IVPredicate.identity(d1), phi2))
    rhs = ivp_add(phi, IVPredicate.bounded(n * np.eye(d1 * d2), check=False))
    return ivp_leq(lhs, rhs, tol)
