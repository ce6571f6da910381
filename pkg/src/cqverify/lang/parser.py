"""Recursive-descent parser for .cq files (declarations and programs)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CqSyntaxError, DuplicateDecl
from .ast import (Abort, Apply, Assign, BinOp, Command, Expr, If, KetExpr, Measure, Num, QInit,
                  Sample, Seq, Skip, Span, UnOp, Var, While)
from .decls import BUILTIN_CONSTS, BUILTIN_FUNCS, Decls, Program, basis_ket
from .lexer import Token, TokenStream, tokenize

KEYWORDS = {"var", "qvar", "dist", "meas", "unitary", "ket", "matrix", "prog", "skip", "abort",
            "if", "else", "while", "measure", "true", "false", "int", "bool", "qubit", "qudit"}


@dataclass
class Module:
    """Result of parsing a .cq file."""

    decls: Decls
    progs: dict = field(default_factory=dict)  # name -> Command
    order: list = field(default_factory=list)   # declaration order of items, for printing

    def program(self, name: str) -> Program:
        if name not in self.progs:
            raise KeyError(f"no program named '{name}'")
        return Program(name, self.progs[name], self.decls)


def parse(text: str) -> Module:
    return _Parser(tokenize(text)).module()


def parse_file(path: str) -> Module:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def parse_expr(text: str) -> Expr:
    p = _Parser(tokenize(text))
    e = p.expr()
    if p.ts.peek().kind != "EOF":
        raise p.ts.error("unexpected trailing input")
    return e


def parse_const(text: str, decls: Decls | None = None):
    """Evaluate a constant (scalar, vector or matrix) expression."""
    p = _Parser(tokenize(text))
    if decls is not None:
        p.decls = decls
    v = p.cexpr()
    if p.ts.peek().kind != "EOF":
        raise p.ts.error("unexpected trailing input")
    return v


def parse_command(text: str, decls: Decls | None = None) -> Command:
    p = _Parser(tokenize(text))
    if decls is not None:
        p.decls = decls
    c = p.stmts(until_eof=True)
    return c


# binary operator precedence levels, loosest first
PREC = [["<->"], ["->"], ["||"], ["&&"], ["==", "!=", "<", "<=", ">", ">="], ["+", "-"], ["*", "/", "%"]]


class _Parser:
    def __init__(self, toks: list[Token]):
        self.ts = TokenStream(toks)
        self.decls = Decls()
        self.progs: dict = {}
        self.order: list = []

    # -- top level ---------------------------------------------------------
    def module(self) -> Module:
        ts = self.ts
        while ts.peek().kind != "EOF":
            t = ts.peek()
            if t.text == "prog":
                self.prog()
            elif t.text in ("var", "qvar", "dist", "meas", "unitary", "ket", "matrix"):
                self.decl()
            else:
                raise ts.error(f"expected a declaration or program, found '{t.text}'")
        return Module(self.decls, self.progs, self.order)

    def _fresh(self, tok: Token):
        if tok.text in self.decls.all_names() or tok.text in self.progs:
            raise DuplicateDecl(f"{tok.line}:{tok.col}: '{tok.text}' is declared twice")
        if tok.text in KEYWORDS:
            raise CqSyntaxError(f"'{tok.text}' is a reserved word", tok.line, tok.col)

    def prog(self):
        ts = self.ts
        ts.expect("prog")
        name = ts.ident()
        self._fresh(name)
        ts.expect("{")
        body = self.stmts()
        ts.expect("}")
        self.progs[name.text] = body
        self.order.append(("prog", name.text))

    def decl(self):
        ts = self.ts
        kw = ts.next().text
        name = ts.ident()
        self._fresh(name)
        d = self.decls
        if kw == "var":
            ts.expect(":")
            if ts.accept("bool"):
                d.cvars[name.text] = (0, 1)
            else:
                ts.expect("int")
                ts.expect("[")
                lo = self.signed_int()
                ts.expect("..")
                hi = self.signed_int()
                ts.expect("]")
                if hi < lo:
                    raise CqSyntaxError("empty integer domain", name.line, name.col)
                d.cvars[name.text] = (lo, hi)
        elif kw == "qvar":
            ts.expect(":")
            if ts.accept("qubit"):
                dim = 2
            elif ts.accept("qudit"):
                ts.expect("(")
                dim = self.signed_int()
                ts.expect(")")
            else:
                dim = self.signed_int()
            if dim < 1:
                raise CqSyntaxError("register dimension must be positive", name.line, name.col)
            d.qvars[name.text] = dim
        elif kw == "dist":
            ts.expect("=")
            d.dists[name.text] = self.dist_value()
        elif kw == "meas":
            ts.expect("=")
            d.meas[name.text] = self.meas_value()
        else:
            ts.expect("=")
            val = self.cexpr()
            arr = np.asarray(val, dtype=complex)
            if kw == "ket":
                if arr.ndim != 1:
                    raise CqSyntaxError("ket must be a vector", name.line, name.col)
                d.kets[name.text] = arr
            else:
                if arr.ndim != 2:
                    raise CqSyntaxError(f"{kw} must be a matrix", name.line, name.col)
                (d.unitaries if kw == "unitary" else d.matrices)[name.text] = arr
        ts.expect(";")
        self.order.append((kw, name.text))

    def signed_int(self) -> int:
        neg = self.ts.accept("-")
        t = self.ts.next()
        if t.kind != "NUM" or not t.text.isdigit():
            raise CqSyntaxError(f"expected an integer, found '{t.text}'", t.line, t.col)
        return -int(t.text) if neg else int(t.text)

    def dist_value(self) -> dict:
        ts = self.ts
        if ts.accept("{"):
            out = {}
            while True:
                k = self.signed_int()
                ts.expect(":")
                out[k] = self._real(self.cexpr())
                if not ts.accept(","):
                    break
            ts.expect("}")
            return out
        t = ts.ident()
        ts.expect("(")
        if t.text == "bern":
            p = self._real(self.cexpr())
            ts.expect(")")
            return {0: 1 - p, 1: p}
        if t.text == "uniform":
            lo = self.signed_int()
            ts.expect(",")
            hi = self.signed_int()
            ts.expect(")")
            n = hi - lo + 1
            return {v: 1 / n for v in range(lo, hi + 1)}
        raise CqSyntaxError(f"unknown distribution constructor '{t.text}'", t.line, t.col)

    def meas_value(self) -> dict:
        ts = self.ts
        if ts.accept("{"):
            out = {}
            while True:
                k = self.signed_int()
                ts.expect(":")
                out[k] = np.asarray(self.cexpr(), dtype=complex)
                if not ts.accept(","):
                    break
            ts.expect("}")
            return out
        t = ts.ident()
        if t.text != "std":
            raise CqSyntaxError(f"unknown measurement constructor '{t.text}'", t.line, t.col)
        ts.expect("(")
        d = self.signed_int()
        ts.expect(")")
        return {i: np.outer(basis_ket(i, d), basis_ket(i, d)) for i in range(d)}

    @staticmethod
    def _real(z) -> float:
        z = complex(z)
        if abs(z.imag) > 1e-15:
            raise CqSyntaxError("expected a real number")
        return z.real

    # -- constant expressions (matrices, vectors, scalars) --------------------
    def cexpr(self):
        v = self.cterm()
        while self.ts.at("+") or self.ts.at("-"):
            op = self.ts.next().text
            w = self.cterm()
            v = v + w if op == "+" else v - w
        return v

    def cterm(self):
        v = self.cunary()
        while self.ts.at("*") or self.ts.at("/"):
            op = self.ts.next().text
            w = self.cunary()
            if op == "/":
                v = v / w
            elif np.ndim(v) == 0 or np.ndim(w) == 0:
                v = v * w
            else:
                v = np.asarray(v) @ np.asarray(w)
        return v

    def cunary(self):
        if self.ts.accept("-"):
            return -self.cunary()
        return self.catom()

    def catom(self):
        ts = self.ts
        t = ts.peek()
        if t.kind == "NUM":
            ts.next()
            return float(t.text) if any(c in t.text for c in ".eE") else int(t.text)
        if ts.accept("("):
            v = self.cexpr()
            ts.expect(")")
            return v
        if ts.accept("["):
            items = []
            if not ts.at("]"):
                while True:
                    items.append(self.cexpr())
                    if not ts.accept(","):
                        break
            ts.expect("]")
            return np.array(items, dtype=complex)
        if t.kind == "IDENT":
            ts.next()
            if t.text == "i":
                return 1j
            if t.text == "pi":
                return np.pi
            if ts.at("("):
                fn = BUILTIN_FUNCS.get(t.text)
                if fn is None:
                    raise CqSyntaxError(f"unknown function '{t.text}'", t.line, t.col)
                ts.expect("(")
                args = []
                if not ts.at(")"):
                    while True:
                        args.append(self.cexpr())
                        if not ts.accept(","):
                            break
                ts.expect(")")
                try:
                    return fn(*args)
                except Exception as exc:  # constant folding errors carry the position
                    raise CqSyntaxError(f"in {t.text}(...): {exc}", t.line, t.col) from None
            try:
                return self.decls.constant(t.text)
            except Exception:
                raise CqSyntaxError(f"unknown constant '{t.text}'", t.line, t.col) from None
        raise CqSyntaxError(f"unexpected '{t.text or 'end of input'}' in constant", t.line, t.col)

    # -- commands ------------------------------------------------------------
    def stmts(self, until_eof: bool = False) -> Command:
        ts = self.ts
        out: list[Command] = []
        start = ts.peek()
        while not ts.at("}") and ts.peek().kind != "EOF":
            out.append(self.stmt())
        if until_eof and ts.peek().kind != "EOF":
            raise ts.error("unexpected '}'")
        if not out:
            return Skip(Span(start.line, start.col))
        if len(out) == 1:
            return out[0]
        return Seq(tuple(out), Span(start.line, start.col))

    def block(self) -> Command:
        self.ts.expect("{")
        c = self.stmts()
        self.ts.expect("}")
        return c

    def stmt(self) -> Command:
        ts = self.ts
        t = ts.peek()
        sp = Span(t.line, t.col)
        if ts.accept("skip"):
            ts.expect(";")
            return Skip(sp)
        if ts.accept("abort"):
            ts.expect(";")
            return Abort(sp)
        if ts.accept("if"):
            b = self.expr()
            then = self.block()
            if ts.accept("else"):
                if ts.at("if"):
                    orelse = self.stmt()
                else:
                    orelse = self.block()
            else:
                orelse = Skip(sp)
            return If(b, then, orelse, sp)
        if ts.accept("while"):
            b = self.expr()
            body = self.block()
            return While(b, body, sp)
        if t.kind != "IDENT":
            raise ts.error(f"expected a statement, found '{t.text or 'end of input'}'")
        if t.text in KEYWORDS:
            raise ts.error(f"unexpected keyword '{t.text}'")
        names = [ts.ident().text]
        while ts.accept(","):
            names.append(ts.ident().text)
        if ts.accept(":="):
            if ts.at("ket") and ts.at("(", 1):
                ts.next()
                ts.expect("(")
                k = self.ket_arg()
                ts.expect(")")
                ts.expect(";")
                return QInit(tuple(names), k, sp)
            if len(names) != 1:
                raise ts.error("classical assignment takes a single variable")
            e = self.expr()
            ts.expect(";")
            return Assign(names[0], e, sp)
        if ts.accept("*="):
            u = ts.ident().text
            ts.expect(";")
            return Apply(tuple(names), u, sp)
        if ts.accept("<$"):
            if len(names) != 1:
                raise ts.error("sampling assigns a single variable")
            mu = ts.ident().text
            ts.expect(";")
            return Sample(names[0], mu, sp)
        if ts.accept("<-"):
            if len(names) != 1:
                raise ts.error("measurement assigns a single variable")
            ts.expect("measure")
            m = ts.ident().text
            regs = [ts.ident().text]
            while ts.accept(","):
                regs.append(ts.ident().text)
            ts.expect(";")
            return Measure(names[0], m, tuple(regs), sp)
        raise ts.error(f"expected ':=', '*=', '<$' or '<-' after '{t.text}'")

    def ket_arg(self) -> KetExpr:
        ts = self.ts
        t = ts.peek()
        if t.kind == "IDENT" and ts.at(")", 1) and self.decls.is_ket_name(t.text):
            ts.next()
            return KetExpr(name=t.text)
        return KetExpr(index=self.expr())

    # -- classical expressions ---------------------------------------------------
    def expr(self, level: int = 0) -> Expr:
        if level == len(PREC):
            return self.unary()
        ops = PREC[level]
        left = self.expr(level + 1)
        while self.ts.peek().kind == "SYM" and self.ts.peek().text in ops:
            op = self.ts.next().text
            right = self.expr(level + 1)
            left = BinOp(op, left, right)
        return left

    def unary(self) -> Expr:
        ts = self.ts
        if ts.accept("-"):
            arg = self.unary()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return UnOp("-", arg)
        if ts.accept("!"):
            return UnOp("!", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        ts = self.ts
        t = ts.peek()
        if t.kind == "NUM":
            ts.next()
            if not t.text.isdigit():
                raise CqSyntaxError("classical expressions are integer-valued", t.line, t.col)
            return Num(int(t.text))
        if ts.accept("true"):
            return Num(1)
        if ts.accept("false"):
            return Num(0)
        if ts.accept("("):
            e = self.expr()
            ts.expect(")")
            return e
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            ts.next()
            return Var(t.text)
        raise CqSyntaxError(f"unexpected '{t.text or 'end of input'}' in expression", t.line, t.col)


__all__ = ["Module", "parse", "parse_file", "parse_expr", "parse_const", "parse_command", "BUILTIN_CONSTS"]
