"""Pretty-printer for cqWhile; its output re-parses to an identical AST."""

from __future__ import annotations

import numpy as np

from .ast import (Abort, Apply, Assign, BinOp, Command, Expr, If, Measure, Num, QInit, Sample,
                  Seq, Skip, UnOp, Var, While)
from .decls import Decls
from .parser import PREC, Module

_LEVEL = {op: i for i, ops in enumerate(PREC) for op in ops}


def pretty_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, UnOp):
        inner = pretty_expr(e.arg)
        if isinstance(e.arg, BinOp) or (isinstance(e.arg, Num) and e.op == "-"):
            inner = f"({inner})"
        return f"{e.op}{inner}"
    if isinstance(e, BinOp):
        lv = _LEVEL[e.op]
        left = pretty_expr(e.left)
        right = pretty_expr(e.right)
        if isinstance(e.left, BinOp) and _LEVEL[e.left.op] < lv:
            left = f"({left})"
        if isinstance(e.right, BinOp) and _LEVEL[e.right.op] <= lv:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def pretty_command(c: Command, indent: int = 0) -> str:
    return "\n".join(_lines(c, indent))


def _lines(c: Command, ind: int) -> list[str]:
    pad = "  " * ind
    if isinstance(c, Seq):
        out = []
        for s in c.cmds:
            out.extend(_lines(s, ind))
        return out
    if isinstance(c, Skip):
        return [pad + "skip;"]
    if isinstance(c, Abort):
        return [pad + "abort;"]
    if isinstance(c, Assign):
        return [f"{pad}{c.var} := {pretty_expr(c.expr)};"]
    if isinstance(c, Sample):
        return [f"{pad}{c.var} <$ {c.dist};"]
    if isinstance(c, QInit):
        arg = c.ket.name if c.ket.name is not None else pretty_expr(c.ket.index)
        return [f"{pad}{', '.join(c.regs)} := ket({arg});"]
    if isinstance(c, Apply):
        return [f"{pad}{', '.join(c.regs)} *= {c.unitary};"]
    if isinstance(c, Measure):
        return [f"{pad}{c.var} <- measure {c.meas} {', '.join(c.regs)};"]
    if isinstance(c, If):
        out = [f"{pad}if {pretty_expr(c.cond)} {{"]
        out += _lines(c.then, ind + 1)
        out.append(f"{pad}}} else {{")
        out += _lines(c.orelse, ind + 1)
        out.append(pad + "}")
        return out
    if isinstance(c, While):
        out = [f"{pad}while {pretty_expr(c.cond)} {{"]
        out += _lines(c.body, ind + 1)
        out.append(pad + "}")
        return out
    raise TypeError(f"not a command: {c!r}")


def _num(z: complex) -> str:
    z = complex(z)
    if z.imag == 0:
        return repr(float(z.real))
    if z.real == 0:
        return f"{float(z.imag)!r}*i"
    return f"({float(z.real)!r} + {float(z.imag)!r}*i)"


def _array(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        return "[" + ", ".join(_num(z) for z in a) + "]"
    return "[" + ", ".join(_array(row) for row in a) + "]"


def pretty_decls(d: Decls, order=None) -> list[str]:
    items = order or ([("var", n) for n in d.cvars] + [("qvar", n) for n in d.qvars]
                      + [("dist", n) for n in d.dists] + [("meas", n) for n in d.meas]
                      + [("unitary", n) for n in d.unitaries] + [("ket", n) for n in d.kets]
                      + [("matrix", n) for n in d.matrices])
    out = []
    for kw, name in items:
        if kw == "prog":
            continue
        if kw == "var":
            lo, hi = d.cvars[name]
            ty = "bool" if (lo, hi) == (0, 1) else f"int[{lo}..{hi}]"
            out.append(f"var {name} : {ty};")
        elif kw == "qvar":
            out.append(f"qvar {name} : {d.qvars[name]};")
        elif kw == "dist":
            body = ", ".join(f"{k}: {_num(p)}" for k, p in d.dists[name].items())
            out.append(f"dist {name} = {{{body}}};")
        elif kw == "meas":
            body = ", ".join(f"{k}: {_array(m)}" for k, m in d.meas[name].items())
            out.append(f"meas {name} = {{{body}}};")
        elif kw == "unitary":
            out.append(f"unitary {name} = {_array(d.unitaries[name])};")
        elif kw == "ket":
            out.append(f"ket {name} = {_array(d.kets[name])};")
        elif kw == "matrix":
            out.append(f"matrix {name} = {_array(d.matrices[name])};")
    return out


def pretty_module(m: Module) -> str:
    lines = pretty_decls(m.decls, [it for it in m.order if it[0] != "prog"] or None)
    for kw, name in m.order:
        if kw != "prog":
            continue
        lines.append("")
        lines.append(f"prog {name} {{")
        lines.append(pretty_command(m.progs[name], 1))
        lines.append("}")
    return "\n".join(lines) + "\n"
