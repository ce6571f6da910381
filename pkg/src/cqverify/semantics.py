"""Denotational semantics of cqWhile on classical-quantum states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import sparse

from .cqstate import CqState, Env
from .errors import DimMismatch, DomainOverflow
from .lang.ast import (Abort, Apply, Assign, Command, Expr, If, Measure, QInit, Sample, Seq, Skip,
                       While, has_abort)
from .lang.decls import Decls, Program, Space
from .opalg import dag


@dataclass(frozen=True)
class SemOpts:
    loop_max_iters: int = 10_000
    loop_residual_tol: float = 1e-10
    prune_tol: float = 1e-12
    on_overflow: str = "raise"  # or "abort": drop the mass and record it
    linearize: bool = True       # long loops switch to a precomputed transfer matrix
    loop_solve: bool = True      # and then solve (I - T) x = v for the limit when mass is conserved

    def __post_init__(self):
        if self.loop_max_iters < 0 or self.loop_residual_tol <= 0 or self.prune_tol <= 0:
            raise ValueError("semantic options must be positive")
        if self.on_overflow not in ("raise", "abort"):
            raise ValueError("on_overflow must be 'raise' or 'abort'")


@dataclass
class SemReport:
    output: CqState
    residual_trace: float = 0.0
    iters_used: dict = field(default_factory=dict)
    domain_errors: list = field(default_factory=list)
    loop_residuals: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "output": self.output.to_json(),
            "output_trace": self.output.trace(),
            "residualTrace": self.residual_trace,
            "itersUsed": {str(k): v for k, v in self.iters_used.items()},
            "domainErrors": list(self.domain_errors),
            "prunedMass": self.output.pruned,
        }


def eval_measurement(meas: dict, rho: np.ndarray) -> dict:
    """Eval(M)(rho) = {v: M_v rho M_v^dag}."""
    out = {}
    for v, M in meas.items():
        if M.shape[1] != rho.shape[0]:
            raise DimMismatch(f"measurement operator {M.shape} vs state {rho.shape}")
        out[v] = M @ rho @ dag(M)
    return out


def eval_distribution(mu: dict, rho: np.ndarray) -> dict:
    """Eval(mu)(rho) = {v: mu(v) rho}."""
    return {v: p * rho for v, p in mu.items()}


def _add(d: dict, env: Env, rho: np.ndarray):
    cur = d.get(env)
    d[env] = rho if cur is None else cur + rho


class Interpreter:
    """Evaluates commands over a fixed declaration table and register space."""

    def __init__(self, decls: Decls, space: Space, opts: SemOpts = SemOpts()):
        self.decls = decls
        self.space = space
        self.opts = opts
        self._cache: dict = {}
        self.residual = 0.0
        self.iters: dict = {}
        self.domain_errors: list = []
        self.loop_residuals: list = []

    # operator caches ---------------------------------------------------------
    def unitary(self, c: Apply) -> np.ndarray:
        key = ("U", c.regs, c.unitary)
        if key not in self._cache:
            U = self.decls.unitary(c.unitary)
            self._cache[key] = self.space.lift(U, c.regs)
        return self._cache[key]

    def measurement(self, c: Measure) -> list:
        key = ("M", c.regs, c.meas)
        if key not in self._cache:
            ms = self.decls.meas[c.meas]
            self._cache[key] = [(k, self.space.lift(M, c.regs)) for k, M in ms.items()]
        return self._cache[key]

    def init_kraus(self, regs: tuple, vec: np.ndarray) -> list:
        key = ("K", regs, vec.tobytes())
        if key not in self._cache:
            d = self.space.reg_dim(regs)
            if len(vec) != d:
                raise DimMismatch(f"ket of dimension {len(vec)} for registers of dimension {d}")
            ks = []
            for i in range(d):
                K = np.outer(vec, np.eye(d)[i])
                ks.append(self.space.lift(K, regs))
            self._cache[key] = ks
        return self._cache[key]

    def ket_for(self, c: QInit, env: Env) -> np.ndarray:
        if c.ket.name is not None:
            return np.asarray(self.decls.ket_vector(c.ket.name), dtype=complex)
        d = self.space.reg_dim(c.regs)
        i = c.ket.index(env)
        if not 0 <= i < d:
            raise DomainOverflow(f"ket({'/'.join(c.regs)})", i, (0, d - 1))
        v = np.zeros(d, dtype=complex)
        v[i] = 1
        return v

    def _check_domain(self, var: str, value: int, env: Env) -> bool:
        lo, hi = self.decls.domain(var)
        if lo <= value <= hi:
            return True
        if self.opts.on_overflow == "raise":
            raise DomainOverflow(var, value, (lo, hi))
        return False

    # evaluation --------------------------------------------------------------
    def run(self, c: Command, ents: dict) -> dict:
        if not ents:
            return {}
        if isinstance(c, Skip):
            return ents
        if isinstance(c, Abort):
            return {}
        if isinstance(c, Seq):
            for s in c.cmds:
                ents = self.run(s, ents)
            return ents
        if isinstance(c, Assign):
            out: dict = {}
            for env, rho in ents.items():
                v = c.expr(env)
                if not self._check_domain(c.var, v, env):
                    self._overflow(c.var, v, rho)
                    continue
                _add(out, env.set(c.var, v), rho)
            return out
        if isinstance(c, Sample):
            mu = self.decls.dists[c.dist]
            out = {}
            for env, rho in ents.items():
                for v, p in mu.items():
                    if p <= 0:
                        continue
                    if not self._check_domain(c.var, v, env):
                        self._overflow(c.var, v, p * rho)
                        continue
                    _add(out, env.set(c.var, v), p * rho)
            return out
        if isinstance(c, QInit):
            out = {}
            for env, rho in ents.items():
                ks = self.init_kraus(c.regs, self.ket_for(c, env))
                out[env] = out.get(env, 0) + sum(K @ rho @ dag(K) for K in ks)
            return out
        if isinstance(c, Apply):
            U = self.unitary(c)
            Ud = dag(U)
            return {env: U @ rho @ Ud for env, rho in ents.items()}
        if isinstance(c, Measure):
            out = {}
            for env, rho in ents.items():
                for k, M in self.measurement(c):
                    r = M @ rho @ dag(M)
                    if np.trace(r).real < self.opts.prune_tol:
                        continue
                    if not self._check_domain(c.var, k, env):
                        self._overflow(c.var, k, r)
                        continue
                    _add(out, env.set(c.var, k), r)
            return out
        if isinstance(c, If):
            yes = {e: r for e, r in ents.items() if c.cond(e)}
            no = {e: r for e, r in ents.items() if not c.cond(e)}
            out = dict(self.run(c.then, yes))
            for e, r in self.run(c.orelse, no).items():
                _add(out, e, r)
            return out
        if isinstance(c, While):
            return self.run_while(c.cond, c.body, ents, self.opts.loop_max_iters, tol=self.opts.loop_residual_tol,
                                  key=c.span)
        raise TypeError(f"unknown command {c!r}")

    def _overflow(self, var: str, value: int, rho: np.ndarray):
        self.domain_errors.append({"var": var, "value": int(value), "mass": float(np.trace(rho).real)})

    def _prune(self, ents: dict) -> dict:
        tol = self.opts.prune_tol
        return {e: r for e, r in ents.items() if np.trace(r).real >= tol}

    def run_while(self, b: Expr, body: Command, ents: dict, max_iters: int, tol: float | None,
                  key=None) -> dict:
        """Partial sums sum_{i<=n} r_{not b} (body o r_b)^i, stopping once the guard
        mass drops below tol (tol=None runs exactly max_iters rounds)."""
        out: dict = {}
        cur = ents
        i = 0
        while True:
            for e, r in cur.items():
                if not b(e):
                    _add(out, e, r)
            inside = {e: r for e, r in cur.items() if b(e)}
            mass = float(sum(np.trace(r).real for r in inside.values()))
            if i >= max_iters or (tol is not None and mass < tol) or not inside:
                break
            if self.opts.linearize and i >= LINEAR_AFTER:
                lin = self._linear_loop(b, body, inside, max_iters - i, tol)
                if lin is not None:
                    extra, mass, used = lin
                    for e, r in extra.items():
                        _add(out, e, r)
                    i += used
                    break
            cur = self._prune(self.run(body, inside))
            i += 1
        self.residual += mass
        self.loop_residuals.append(mass)
        if key is not None:
            self.iters[key] = max(self.iters.get(key, 0), i)
        return out

    # linearized loops ------------------------------------------------------------
    def _linearize(self, body: Command, env: Env):
        """Transfer maps of body at env: {env': L} with vec(out) = L vec(rho), plus the
        linear functionals of overflow mass and nested-loop residual."""
        d = self.space.dim
        basis, binv = _psd_basis(d)
        sub = Interpreter(self.decls, self.space, self.opts)
        sub._cache = self._cache
        cols: dict = {}
        ovf: dict = {}
        res = np.zeros(len(basis))
        for k, B in enumerate(basis):
            sub.domain_errors, sub.residual = [], 0.0
            for e2, r in sub.run(body, {env: B}).items():
                cols.setdefault(e2, np.zeros((d * d, len(basis)), dtype=complex))[:, k] = r.reshape(-1)
            for err in sub.domain_errors:
                ovf.setdefault((err["var"], err["value"]), np.zeros(len(basis)))[k] += err["mass"]
            res[k] = sub.residual
            for kk, n in sub.iters.items():
                self.iters[kk] = max(self.iters.get(kk, 0), n)
        maps = {e2: C @ binv for e2, C in cols.items()}
        return maps, {k: f @ binv for k, f in ovf.items()}, res @ binv

    def _linear_loop(self, b: Expr, body: Command, inside: dict, budget: int, tol: float | None):
        d = self.space.dim
        dd = d * d
        slots: dict = {}
        exits: dict = {}
        blocks, eblocks = [], []
        ovf_rows: dict = {}
        res_rows = []
        queue = list(inside)
        for e in queue:
            slots.setdefault(e, len(slots))
        try:
            while queue:
                e = queue.pop()
                maps, ovf, res = self._linearize(body, e)
                i = slots[e]
                res_rows.append((i, res))
                for k, f in ovf.items():
                    ovf_rows.setdefault(k, []).append((i, f))
                for e2, L in maps.items():
                    if b(e2):
                        if e2 not in slots:
                            if len(slots) >= LINEAR_MAX_SLOTS:
                                return None
                            slots[e2] = len(slots)
                            queue.append(e2)
                        blocks.append((slots[e2], i, L))
                    else:
                        eblocks.append((exits.setdefault(e2, len(exits)), i, L))
        except DomainOverflow:
            return None
        n, m = len(slots), len(exits)
        T = _block_matrix(blocks, n, n, dd)
        E = _block_matrix(eblocks, m, n, dd)

        def functional(rows):
            f = np.zeros(n * dd, dtype=complex)
            for i, row in rows:
                f[i * dd:(i + 1) * dd] += row
            return f

        fres = functional(res_rows)
        fovf = {k: functional(rows) for k, rows in ovf_rows.items()}
        tr = np.tile(np.eye(d).reshape(-1), n)
        v = np.zeros(n * dd, dtype=complex)
        for e, r in inside.items():
            v[slots[e] * dd:(slots[e] + 1) * dd] = r.reshape(-1)
        if self.opts.loop_solve and tol is not None:
            x = _fixed_point(T, v)
            if x is not None:
                lost = {k: float(np.real(f @ x)) for k, f in fovf.items()}
                nested = float(np.real(fres @ x))
                acc = E @ x
                out_mass = float(np.real(np.tile(np.eye(d).reshape(-1), m) @ acc)) if m else 0.0
                v_mass = float(np.real(tr @ v))
                # accept only if all input mass is accounted for, i.e. the loop terminates from v
                if abs(out_mass + sum(lost.values()) + nested - v_mass) <= 1e-10 * max(1.0, v_mass):
                    return self._linear_out(exits, acc, lost, nested, d), 0.0, 1
        acc = np.zeros(m * dd, dtype=complex)
        lost = {k: 0.0 for k in fovf}
        nested = 0.0
        used = 0
        while True:
            nested += float(np.real(fres @ v))
            for k, f in fovf.items():
                lost[k] += float(np.real(f @ v))
            acc += E @ v
            v = T @ v
            used += 1
            mass = float(np.real(tr @ v))
            if used >= budget or (tol is not None and mass < tol) or mass == 0.0:
                break
        return self._linear_out(exits, acc, lost, nested, d), mass, used

    def _linear_out(self, exits: dict, acc: np.ndarray, lost: dict, nested: float, d: int) -> dict:
        dd = d * d
        self.residual += nested
        for (var, value), mass_lost in lost.items():
            if mass_lost > 0:
                self.domain_errors.append({"var": var, "value": int(value), "mass": mass_lost})
        out = {}
        for e, j in exits.items():
            r = acc[j * dd:(j + 1) * dd].reshape(d, d)
            r = (r + r.conj().T) / 2
            if np.trace(r).real >= self.opts.prune_tol:
                out[e] = r
        return out


LINEAR_AFTER = 64
LINEAR_MAX_SLOTS = 4096
_BASES: dict = {}


def _psd_basis(d: int):
    """d*d PSD matrices spanning all d x d operators, and the inverse of their vec matrix."""
    if d not in _BASES:
        I = np.eye(d, dtype=complex)
        basis = [np.outer(I[a], I[a]) for a in range(d)]
        for a in range(d):
            for c in range(a + 1, d):
                for v in (I[a] + I[c], I[a] + 1j * I[c]):
                    basis.append(np.outer(v, v.conj()) / 2)
        M = np.stack([B.reshape(-1) for B in basis], axis=1)
        _BASES[d] = (basis, np.linalg.inv(M))
    return _BASES[d]


def _fixed_point(T, v: np.ndarray):
    """x = sum_k T^k v as the solution of (I - T) x = v, or None if the solve is unreliable."""
    import warnings
    from scipy.sparse.linalg import spsolve
    A = sparse.identity(T.shape[0], dtype=complex, format="csc") - T.tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            x = spsolve(A, v)
        except (RuntimeError, Warning, ValueError):
            return None
    x = np.atleast_1d(x)
    if not np.all(np.isfinite(x)) or np.linalg.norm(A @ x - v) > 1e-10 * max(1.0, np.linalg.norm(v)):
        return None
    return x


def _block_matrix(blocks: list, n_rows: int, n_cols: int, dd: int):
    if not blocks:
        return sparse.csr_matrix((n_rows * dd, n_cols * dd), dtype=complex)
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(dd), np.arange(dd), indexing="ij")
    for i, j, L in blocks:
        rows.append((i * dd + ii).ravel())
        cols.append((j * dd + jj).ravel())
        vals.append(L.ravel())
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_rows * dd, n_cols * dd))


def _context(c, decls: Decls | None, space: Space | None):
    if isinstance(c, Program):
        return c.body, decls or c.decls, space or c.space
    if decls is None:
        raise ValueError("a declaration table is required for a bare command")
    if space is None:
        from .lang.ast import quantum_vars
        space = decls.space(quantum_vars(c))
    return c, decls, space


def denote(c, delta: CqState, opts: SemOpts = SemOpts(), decls: Decls | None = None,
           space: Space | None = None) -> SemReport:
    """Run c (a Program, or a Command with decls/space) on delta."""
    body, decls, space = _context(c, decls, space)
    if delta.qdim != space.dim:
        raise DimMismatch(f"state qdim {delta.qdim} vs register space dim {space.dim}")
    it = Interpreter(decls, space, opts)
    out = it.run(body, dict(delta.entries))
    rep = SemReport(CqState(delta.qdim, out, delta.pruned, prune_tol=opts.prune_tol), it.residual,
                    {f"{k.line}:{k.col}" if hasattr(k, "line") else str(k): v for k, v in it.iters.items()},
                    it.domain_errors, it.loop_residuals)
    return rep


def denote_truncated(b: Expr, body: Command, n: int, delta: CqState, decls: Decls, space: Space,
                     opts: SemOpts = SemOpts()) -> CqState:
    """Semantics of the n-th truncated iterate of while b body."""
    it = Interpreter(decls, space, opts)
    out = it.run_while(b, body, dict(delta.entries), n, tol=None)
    return CqState(delta.qdim, out, prune_tol=opts.prune_tol)


@dataclass
class HastVerdict:
    status: str  # "Pass" or "Inconclusive"
    max_residual: float
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "Pass"


def check_hast(c, probes: Iterable[CqState], opts: SemOpts = SemOpts(), decls: Decls | None = None,
               space: Space | None = None) -> HastVerdict:
    """Probe-based evidence that every loop of c terminates almost surely."""
    body, decls, space = _context(c, decls, space)
    if has_abort(body):
        return HastVerdict("Inconclusive", 1.0, "program contains abort")
    worst = 0.0
    for delta in probes:
        it = Interpreter(decls, space, opts)
        try:
            out = it.run(body, dict(delta.entries))
        except DomainOverflow as exc:
            return HastVerdict("Inconclusive", float("inf"), f"domain overflow: {exc}")
        rel = [r / max(delta.trace(), 1e-300) for r in it.loop_residuals]
        worst = max([worst] + rel)
        lost = delta.trace() - CqState(delta.qdim, out).trace()
        if lost > max(1e-9, 10 * opts.loop_residual_tol) and not it.loop_residuals:
            return HastVerdict("Inconclusive", lost, "trace lost without loops")
    if worst <= opts.loop_residual_tol:
        return HastVerdict("Pass", worst)
    return HastVerdict("Inconclusive", worst, "loop residual above tolerance within the iteration budget")


def run_simple(prog: Program, env: dict, rho=None, opts: SemOpts = SemOpts()) -> SemReport:
    """Convenience: run a program on a simple state (default |0..0>)."""
    d = prog.qdim
    if rho is None:
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1
    return denote(prog, CqState.simple(Env(env), rho), opts)


def probe_states(prog: Program, envs: list[Env] | None = None, states: Callable | None = None,
                 cap: int = 64) -> list[CqState]:
    """Simple states over the program's environments and computational basis."""
    d = prog.qdim
    envs = envs if envs is not None else prog.envs()
    if len(envs) > cap:
        idx = np.linspace(0, len(envs) - 1, cap).round().astype(int)
        envs = [envs[i] for i in sorted(set(idx))]
    out = []
    for env in envs:
        rho = np.eye(d, dtype=complex) / d
        out.append(CqState.simple(env, rho))
    return out
