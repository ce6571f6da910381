"""Dense complex operator algebra and infinite-valued predicates.

Operators are plain complex numpy arrays. An infinite-valued predicate
A = P + inf*X is stored canonically as a PSD finite part P and an
orthogonal projection X with supp(P) orthogonal to X.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import DimMismatch, EigenFailure, NotHermitian, NotProjection, NotPSD

EPS_HERM = 1e-10
EPS_CANON = 1e-9
EPS_SUPP = 1e-9
CLUSTER_REL = 1e-7
RANK_TOL = 1e-9

INF = math.inf


def as_op(M) -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2:
        raise DimMismatch(f"expected a matrix, got shape {A.shape}")
    return A


def dag(M: np.ndarray) -> np.ndarray:
    return M.conj().T


def hermitize(A: np.ndarray) -> np.ndarray:
    return (A + A.conj().T) / 2


def check_hermitian(A, tol: float = EPS_HERM) -> np.ndarray:
    A = as_op(A)
    if A.shape[0] != A.shape[1]:
        raise DimMismatch(f"operator is not square: {A.shape}")
    if np.max(np.abs(A - A.conj().T), initial=0.0) > tol * max(1.0, np.max(np.abs(A), initial=0.0)):
        raise NotHermitian("operator differs from its adjoint")
    return hermitize(A)


def op_norm(A: np.ndarray) -> float:
    """Operator norm of a Hermitian matrix."""
    if A.size == 0:
        return 0.0
    w = eigvalsh(A)
    return float(max(abs(w[0]), abs(w[-1])))


def eigh(A: np.ndarray):
    try:
        return np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc


def eigvalsh(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc


def trace_norm(A: np.ndarray) -> float:
    return float(np.sum(np.abs(eigvalsh(hermitize(A)))))


@dataclass(frozen=True)
class SpectralDecomp:
    """Distinct eigenvalues with their eigenprojectors, ascending."""

    pairs: tuple

    def reconstruct(self) -> np.ndarray:
        return sum(lam * X for lam, X in self.pairs)

    @property
    def eigenvalues(self) -> list[float]:
        return [lam for lam, _ in self.pairs]


def spectral_decompose(A, tol: float = EPS_HERM) -> SpectralDecomp:
    A = check_hermitian(A, max(tol, EPS_HERM))
    w, V = eigh(A)
    thresh = CLUSTER_REL * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    pairs = []
    i = 0
    n = len(w)
    while i < n:
        j = i + 1
        while j < n and w[j] - w[j - 1] <= thresh:
            j += 1
        cols = V[:, i:j]
        pairs.append((float(np.mean(w[i:j])), cols @ dag(cols)))
        i = j
    return SpectralDecomp(tuple(pairs))


def min_eig(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(eigvalsh(hermitize(A))[0])


def is_psd(A: np.ndarray, tol: float = 1e-9) -> bool:
    return min_eig(A) >= -tol


def loewner_leq(A, B, tol: float = 1e-9) -> bool:
    """A below B in Loewner order: B - A has no eigenvalue below -tol."""
    A = as_op(A)
    B = as_op(B)
    if A.shape != B.shape:
        raise DimMismatch(f"{A.shape} vs {B.shape}")
    return min_eig(B - A) >= -tol


def tensor_op(*ops) -> np.ndarray:
    if not ops:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, [as_op(o) for o in ops])


def ptrace(M: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace keeping the subsystems listed in ``keep`` (in that order)."""
    dims = list(dims)
    n = len(dims)
    total = int(np.prod(dims)) if dims else 1
    if M.shape != (total, total):
        raise DimMismatch(f"operator shape {M.shape} does not match dims {dims}")
    keep = list(keep)
    T = M.reshape(dims + dims)
    rows = list(range(n))
    cols = [n + i if i in keep else i for i in range(n)]
    out = [rows[i] for i in keep] + [cols[i] for i in keep]
    R = np.einsum(T, rows + cols, out)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return R.reshape(dk, dk)


def partial_trace(M, side: int, dims: tuple[int, int]) -> np.ndarray:
    """Trace out subsystem ``side`` (1 or 2) of an operator on H1 (x) H2."""
    M = as_op(M)
    d1, d2 = dims
    if M.shape != (d1 * d2, d1 * d2):
        raise DimMismatch(f"operator {M.shape} vs split {dims}")
    T = M.reshape(d1, d2, d1, d2)
    if side == 2:
        return np.einsum("ajbj->ab", T)
    if side == 1:
        return np.einsum("iaib->ab", T)
    raise ValueError("side must be 1 or 2")


def lift_op(M: np.ndarray, positions: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Embed M acting on the subsystems ``positions`` (in that order) into the
    full space with factor dimensions ``dims``, identity elsewhere."""
    return lift_map(M, positions, dims)


def lift_map(M: np.ndarray, positions: Sequence[int], dims_in: Sequence[int],
             out_dims: Sequence[int] | None = None) -> np.ndarray:
    """Embed a (possibly rectangular) map on the listed subsystems.

    ``out_dims`` gives the output dimensions of the listed subsystems; by
    default the map is square.
    """
    dims_in = list(dims_in)
    positions = list(positions)
    n = len(dims_in)
    sub_in = [dims_in[p] for p in positions]
    sub_out = list(out_dims) if out_dims is not None else sub_in
    if M.shape != (int(np.prod(sub_out)), int(np.prod(sub_in))):
        raise DimMismatch(f"map {M.shape} on registers of dims {sub_in}")
    if positions == list(range(n)):
        return M
    rest = [i for i in range(n) if i not in positions]
    drest = int(np.prod([dims_in[i] for i in rest])) if rest else 1
    full = np.kron(M, np.eye(drest, dtype=complex))
    order = positions + rest
    inv = [order.index(i) for i in range(n)]
    dims_out = list(dims_in)
    for p, d in zip(positions, sub_out):
        dims_out[p] = d
    T = full.reshape([dims_out[i] for i in order] + [dims_in[i] for i in order])
    T = T.transpose(inv + [n + i for i in inv])
    return T.reshape(int(np.prod(dims_out)), int(np.prod(dims_in)))


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def proj_of(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def range_projection(A: np.ndarray, rel_tol: float = RANK_TOL) -> np.ndarray:
    """Projection onto the span of eigenvectors of the PSD matrix A whose
    eigenvalue exceeds rel_tol * max(1, ||A||)."""
    d = A.shape[0]
    if d == 0:
        return A.copy()
    w, V = eigh(hermitize(A))
    cut = rel_tol * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    cols = V[:, w > cut]
    return cols @ dag(cols)


def support(A: np.ndarray, rel_tol: float = RANK_TOL) -> np.ndarray:
    """Projection onto the support (nonzero eigenspaces) of a Hermitian A."""
    w, V = eigh(hermitize(A))
    cut = rel_tol * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    cols = V[:, np.abs(w) > cut]
    return cols @ dag(cols)


def join(*projs: np.ndarray) -> np.ndarray:
    """Projection onto the closed span of the ranges of the given projections."""
    nz = [P for P in projs if np.any(np.abs(P) > 0)]
    if not nz:
        return np.zeros_like(projs[0])
    if len(nz) == 1:
        return nz[0]
    return range_projection(sum(nz))


def is_projection(X: np.ndarray, tol: float = 1e-8) -> bool:
    X = as_op(X)
    if X.shape[0] != X.shape[1]:
        return False
    return (np.max(np.abs(X @ X - X), initial=0.0) <= tol
            and np.max(np.abs(X - dag(X)), initial=0.0) <= tol)


def clean_projection(X, tol: float = 1e-8) -> np.ndarray:
    """Validate a projection and return the exact projector onto its range."""
    X = as_op(X)
    if not is_projection(X, tol):
        raise NotProjection("matrix is not an orthogonal projection")
    w, V = eigh(hermitize(X))
    cols = V[:, w > 0.5]
    return cols @ dag(cols)


def subspace_basis(X: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the range of projection X."""
    w, V = eigh(hermitize(X))
    return V[:, w > 0.5]


# ----------------------------------------------------------------------------
# infinite-valued predicates


class IVPredicate:
    """A = P + inf*X in canonical form (P PSD, X projection, P X = 0)."""

    __slots__ = ("finite", "inf", "_flags")

    def __init__(self, finite: np.ndarray, inf: np.ndarray, _canonical: bool = False):
        if not _canonical:
            finite = as_op(finite)
            inf = as_op(inf)
            if finite.shape != inf.shape or finite.shape[0] != finite.shape[1]:
                raise DimMismatch(f"finite part {finite.shape} vs infinite part {inf.shape}")
            finite, inf = _canonicalize(finite, inf)
        self.finite = finite
        self.inf = inf
        self._flags = None

    # constructors -----------------------------------------------------------
    @classmethod
    def zero(cls, d: int) -> "IVPredicate":
        z = np.zeros((d, d), dtype=complex)
        return cls(z, z.copy(), _canonical=True)

    @classmethod
    def identity(cls, d: int) -> "IVPredicate":
        return cls(np.eye(d, dtype=complex), np.zeros((d, d), dtype=complex), _canonical=True)

    @classmethod
    def infinity(cls, d: int) -> "IVPredicate":
        return cls(np.zeros((d, d), dtype=complex), np.eye(d, dtype=complex), _canonical=True)

    @classmethod
    def bounded(cls, P, check: bool = True) -> "IVPredicate":
        P = as_op(P)
        if check:
            P = check_hermitian(P, 1e-8)
            if min_eig(P) < -1e-8:
                raise NotPSD("finite part is not positive semidefinite")
        return cls(hermitize(P), np.zeros_like(P), _canonical=True)

    @classmethod
    def infinite_on(cls, X) -> "IVPredicate":
        X = clean_projection(X)
        return cls(np.zeros_like(X), X, _canonical=True)

    @classmethod
    def from_parts(cls, P, X, check: bool = True) -> "IVPredicate":
        P = as_op(P)
        X = as_op(X)
        if check:
            P = check_hermitian(P, 1e-8)
            if min_eig(P) < -1e-8:
                raise NotPSD("finite part is not positive semidefinite")
            X = clean_projection(X)
        return cls(P, X)

    # properties -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.finite.shape[0]

    def _compute_flags(self):
        if self._flags is None:
            has_inf = bool(np.any(np.abs(self.inf) > 1e-12))
            is_zero_fin = not bool(np.any(np.abs(self.finite) > 1e-14))
            full_inf = has_inf and abs(np.trace(self.inf).real - self.dim) < 1e-9
            self._flags = (has_inf, is_zero_fin, full_inf)
        return self._flags

    @property
    def is_bounded(self) -> bool:
        return not self._compute_flags()[0]

    @property
    def is_zero(self) -> bool:
        f = self._compute_flags()
        return (not f[0]) and f[1]

    @property
    def is_infinity(self) -> bool:
        return self._compute_flags()[2]

    def norm(self) -> float:
        """Operator norm of the finite part (inf if the predicate is unbounded)."""
        if not self.is_bounded:
            return INF
        return op_norm(self.finite)

    def __repr__(self) -> str:
        return f"IVPredicate(dim={self.dim}, rank_inf={int(round(np.trace(self.inf).real))})"

    # algebra shortcuts --------------------------------------------------------
    def __add__(self, other: "IVPredicate") -> "IVPredicate":
        return ivp_add(self, other)

    def expect(self, rho: np.ndarray, eps: float = EPS_SUPP) -> float:
        return _expect(self, rho, eps)

    def to_json(self) -> dict:
        from .cqstate import matrix_to_json
        return {"finite": matrix_to_json(self.finite), "inf_subspace": matrix_to_json(self.inf)}


def _canonicalize(P: np.ndarray, X: np.ndarray):
    X = hermitize(X)
    if np.any(np.abs(X) > 1e-12):
        C = np.eye(X.shape[0]) - X
        P = C @ P @ C
    return hermitize(P), X


def _make(P: np.ndarray, X: np.ndarray) -> IVPredicate:
    return IVPredicate(*_canonicalize(P, X), _canonical=True)


def _check_dims(A: IVPredicate, B: IVPredicate):
    if A.dim != B.dim:
        raise DimMismatch(f"predicate dims {A.dim} vs {B.dim}")


def _tr_prod(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.einsum("ij,ji->", A, B).real)


def _expect(A: IVPredicate, rho: np.ndarray, eps: float = EPS_SUPP) -> float:
    if not A.is_bounded and _tr_prod(A.inf, rho) > eps:
        return INF
    return max(_tr_prod(A.finite, rho), 0.0)


def ivp_expect(A: IVPredicate, rho, eps: float = EPS_SUPP, check: bool = True) -> float:
    """tr(A rho): +inf if rho meets the infinite subspace, else tr(P rho)."""
    rho = as_op(rho)
    if rho.shape != (A.dim, A.dim):
        raise DimMismatch(f"state {rho.shape} vs predicate dim {A.dim}")
    if check and min_eig(rho) < -1e-9:
        raise NotPSD("state is not positive semidefinite")
    return _expect(A, rho, eps)


def ivp_add(A: IVPredicate, B: IVPredicate) -> IVPredicate:
    _check_dims(A, B)
    if A.is_zero:
        return B
    if B.is_zero:
        return A
    if A.is_infinity or B.is_infinity:
        return IVPredicate.infinity(A.dim)
    if A.is_bounded and B.is_bounded:
        return IVPredicate(A.finite + B.finite, A.inf, _canonical=True)
    X = join(A.inf, B.inf)
    return _make(A.finite + B.finite, X)


def ivp_sum(preds: Sequence[IVPredicate], dim: int) -> IVPredicate:
    preds = [p for p in preds if not p.is_zero]
    if not preds:
        return IVPredicate.zero(dim)
    if any(p.is_infinity for p in preds):
        return IVPredicate.infinity(dim)
    P = sum(p.finite for p in preds)
    infs = [p.inf for p in preds if not p.is_bounded]
    if not infs:
        return IVPredicate(hermitize(P), np.zeros_like(P), _canonical=True)
    return _make(P, join(*infs))


def ivp_scale(c: float, A: IVPredicate) -> IVPredicate:
    """c * A for c in [0, inf], with 0 * inf = 0."""
    if c < 0 or math.isnan(c):
        raise ValueError("scale factor must be a nonnegative real or +inf")
    if c == 0:
        return IVPredicate.zero(A.dim)
    if math.isinf(c):
        X = join(support(A.finite), A.inf) if not A.is_zero else np.zeros_like(A.inf)
        return IVPredicate(np.zeros_like(X), X, _canonical=True)
    return IVPredicate(c * A.finite, A.inf, _canonical=True)


def ivp_tensor(A: IVPredicate, B: IVPredicate) -> IVPredicate:
    P = np.kron(A.finite, B.finite)
    if A.is_bounded and B.is_bounded:
        return IVPredicate(P, np.zeros_like(P), _canonical=True)
    sA = support(A.finite)
    sB = support(B.finite)
    X = join(np.kron(sA, B.inf), np.kron(A.inf, sB), np.kron(A.inf, B.inf))
    return _make(P, X)


def ivp_conjugate(M, A: IVPredicate) -> IVPredicate:
    """M^dag A M for a (possibly rectangular) M mapping into A's space."""
    M = as_op(M)
    if M.shape[0] != A.dim:
        raise DimMismatch(f"map {M.shape} into predicate of dim {A.dim}")
    Md = dag(M)
    P = Md @ A.finite @ M
    if A.is_bounded:
        return IVPredicate(hermitize(P), np.zeros((M.shape[1], M.shape[1]), dtype=complex),
                           _canonical=True)
    X = range_projection(Md @ A.inf @ M)
    return _make(P, X)


def ivp_trunc(A: IVPredicate, n: float) -> np.ndarray:
    """sum_j min(lambda_j, n) X_j as a bounded operator."""
    if n <= 0:
        return np.zeros_like(A.finite)
    P = A.finite
    if A.is_bounded and A.is_zero:
        return np.zeros_like(P)
    w, V = eigh(hermitize(P))
    if w.size and w[-1] > n:
        w = np.minimum(w, n)
        P = (V * w) @ dag(V)
    return hermitize(P + n * A.inf)


def guard_embed(X, A: IVPredicate) -> IVPredicate:
    """X | A = A + inf * (I - X)."""
    X = clean_projection(X)
    if X.shape[0] != A.dim:
        raise DimMismatch(f"guard of dim {X.shape[0]} vs predicate dim {A.dim}")
    comp = np.eye(A.dim) - X
    if not np.any(np.abs(comp) > 1e-12):
        return A
    return ivp_add(A, IVPredicate(np.zeros_like(comp), comp, _canonical=True))


def subspace_leq(X: np.ndarray, Y: np.ndarray, tol: float = 1e-7) -> bool:
    """Range of projection X contained in the range of projection Y."""
    R = X - Y @ X
    return float(np.max(np.abs(R), initial=0.0)) <= tol


def ivp_leq(A: IVPredicate, B: IVPredicate, tol: float = 1e-8) -> bool:
    """A below B: X_A within X_B, and P_A <= P_B on the complement of X_B."""
    _check_dims(A, B)
    if B.is_infinity or A.is_zero:
        return True
    if not A.is_bounded and not subspace_leq(A.inf, B.inf):
        return False
    D = B.finite - A.finite
    if not B.is_bounded:
        basis = subspace_basis(np.eye(A.dim) - B.inf)
        if basis.shape[1] == 0:
            return True
        D = dag(basis) @ D @ basis
    return min_eig(D) >= -tol


def ivp_distance(A: IVPredicate, B: IVPredicate) -> tuple[float, float]:
    """(finite-part distance, infinite-subspace distance) in max-abs norm."""
    _check_dims(A, B)
    return (float(np.max(np.abs(A.finite - B.finite), initial=0.0)),
            float(np.max(np.abs(A.inf - B.inf), initial=0.0)))


def ivp_close(A: IVPredicate, B: IVPredicate, tol: float = 1e-8) -> bool:
    df, di = ivp_distance(A, B)
    return df <= tol and di <= max(tol, 1e-7)
