"""Well-formedness checks for declarations and commands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import CqTypeError
from .ast import (Apply, Assign, Command, Expr, If, Measure, Num, QInit, Sample, Span, While,
                  walk)
from .decls import Decls

DIST_TOL = 1e-9
MEAS_TOL = 1e-8
UNITARY_TOL = 1e-8


@dataclass(frozen=True)
class Diagnostic:
    msg: str
    span: Span = Span()

    def __str__(self) -> str:
        return f"{self.span}: {self.msg}" if self.span.line else self.msg


def check_decls(d: Decls) -> list[Diagnostic]:
    out = []
    for name, mu in d.dists.items():
        total = sum(mu.values())
        if abs(total - 1) > DIST_TOL:
            out.append(Diagnostic(f"distribution '{name}' sums to {total:.12g}, not 1"))
        if any(p < 0 for p in mu.values()):
            out.append(Diagnostic(f"distribution '{name}' has a negative probability"))
    for name, ms in d.meas.items():
        shapes = {m.shape for m in ms.values()}
        if len(shapes) != 1 or any(len(s) != 2 or s[0] != s[1] for s in shapes):
            out.append(Diagnostic(f"measurement '{name}' operators must be square of equal size"))
            continue
        dim = next(iter(shapes))[0]
        acc = sum(m.conj().T @ m for m in ms.values())
        if np.max(np.abs(acc - np.eye(dim))) > MEAS_TOL:
            out.append(Diagnostic(f"measurement '{name}' is not complete (sum M^dag M != I)"))
    for name, U in d.unitaries.items():
        if U.shape[0] != U.shape[1] or np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > UNITARY_TOL:
            out.append(Diagnostic(f"'{name}' is not unitary"))
    for name, v in d.kets.items():
        if abs(np.linalg.norm(v) - 1) > 1e-8:
            out.append(Diagnostic(f"ket '{name}' is not normalized"))
    return out


def _expr_names(e: Expr, d: Decls, sp: Span, out: list):
    for v in sorted(e.free_vars()):
        if v not in d.cvars:
            out.append(Diagnostic(f"unknown classical variable '{v}'", sp))


def _regs(regs, d: Decls, sp: Span, out: list) -> int | None:
    ok = True
    for r in regs:
        if r not in d.qvars:
            out.append(Diagnostic(f"unknown quantum variable '{r}'", sp))
            ok = False
    if len(set(regs)) != len(regs):
        out.append(Diagnostic(f"register list {', '.join(regs)} repeats a variable", sp))
        ok = False
    if not ok:
        return None
    return int(np.prod([d.qvars[r] for r in regs]))


def typecheck(c: Command, d: Decls) -> list[Diagnostic]:
    """Return the list of problems found in c (empty when well-typed)."""
    out: list[Diagnostic] = []
    for n in walk(c):
        sp = getattr(n, "span", Span())
        if isinstance(n, Assign):
            if n.var not in d.cvars:
                out.append(Diagnostic(f"unknown classical variable '{n.var}'", sp))
            _expr_names(n.expr, d, sp, out)
            if isinstance(n.expr, Num) and n.var in d.cvars:
                lo, hi = d.cvars[n.var]
                if not lo <= n.expr.value <= hi:
                    out.append(Diagnostic(f"constant {n.expr.value} outside domain of '{n.var}' [{lo}..{hi}]", sp))
        elif isinstance(n, Sample):
            if n.var not in d.cvars:
                out.append(Diagnostic(f"unknown classical variable '{n.var}'", sp))
            if n.dist not in d.dists:
                out.append(Diagnostic(f"unknown distribution '{n.dist}'", sp))
            elif n.var in d.cvars:
                mu = d.dists[n.dist]
                lo, hi = d.cvars[n.var]
                bad = [v for v, p in mu.items() if p > 0 and not lo <= v <= hi]
                if bad:
                    out.append(Diagnostic(f"distribution '{n.dist}' has support {bad} outside domain of '{n.var}'", sp))
                if abs(sum(mu.values()) - 1) > DIST_TOL:
                    out.append(Diagnostic(f"distribution '{n.dist}' sums to {sum(mu.values()):.12g}", sp))
        elif isinstance(n, QInit):
            dim = _regs(n.regs, d, sp, out)
            if n.ket.name is not None:
                try:
                    v = d.ket_vector(n.ket.name)
                except Exception:
                    out.append(Diagnostic(f"unknown ket '{n.ket.name}'", sp))
                else:
                    if dim is not None and len(v) != dim:
                        out.append(Diagnostic(f"ket '{n.ket.name}' has dimension {len(v)}, register has {dim}", sp))
            else:
                _expr_names(n.ket.index, d, sp, out)
                if isinstance(n.ket.index, Num) and dim is not None and not 0 <= n.ket.index.value < dim:
                    out.append(Diagnostic(f"basis index {n.ket.index.value} outside register dimension {dim}", sp))
        elif isinstance(n, Apply):
            dim = _regs(n.regs, d, sp, out)
            if n.unitary not in d.unitaries:
                try:
                    U = d.matrix(n.unitary)
                except Exception:
                    out.append(Diagnostic(f"unknown unitary '{n.unitary}'", sp))
                    continue
                if np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) > UNITARY_TOL:
                    out.append(Diagnostic(f"'{n.unitary}' is not unitary", sp))
            else:
                U = d.unitaries[n.unitary]
            if dim is not None and U.shape[0] != dim:
                out.append(Diagnostic(f"unitary '{n.unitary}' has dimension {U.shape[0]}, register has {dim}", sp))
        elif isinstance(n, Measure):
            dim = _regs(n.regs, d, sp, out)
            if n.var not in d.cvars:
                out.append(Diagnostic(f"unknown classical variable '{n.var}'", sp))
            if n.meas not in d.meas:
                out.append(Diagnostic(f"unknown measurement '{n.meas}'", sp))
                continue
            ms = d.meas[n.meas]
            mdim = next(iter(ms.values())).shape[0]
            if dim is not None and mdim != dim:
                out.append(Diagnostic(f"measurement '{n.meas}' has dimension {mdim}, register has {dim}", sp))
            if n.var in d.cvars:
                lo, hi = d.cvars[n.var]
                bad = [k for k in ms if not lo <= k <= hi]
                if bad:
                    out.append(Diagnostic(f"outcomes {bad} of '{n.meas}' outside domain of '{n.var}'", sp))
        elif isinstance(n, (If, While)):
            _expr_names(n.cond, d, sp, out)
    return out


def check_program(c: Command, d: Decls) -> None:
    diags = check_decls(d) + typecheck(c, d)
    if diags:
        raise CqTypeError(diags)
