"""Abstract syntax of cqWhile commands and classical expressions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from ..errors import UnboundVariable


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NOSPAN = Span()


# ---------------------------------------------------------------------------
# classical expressions


class Expr:
    """Integer-valued classical expression; booleans are encoded as 0/1."""

    def __call__(self, env) -> int:
        raise NotImplementedError

    def free_vars(self) -> set[str]:
        raise NotImplementedError

    def subst(self, mapping: dict[str, "Expr"]) -> "Expr":
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Expr):
    value: int

    def __call__(self, env) -> int:
        return self.value

    def free_vars(self) -> set[str]:
        return set()

    def subst(self, mapping):
        return self


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def __call__(self, env) -> int:
        try:
            return env[self.name]
        except KeyError:
            raise UnboundVariable(f"variable '{self.name}' is not bound") from None

    def free_vars(self) -> set[str]:
        return {self.name}

    def subst(self, mapping):
        return mapping.get(self.name, self)


def _div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("integer division by zero")
    return a // b


def _mod(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("integer modulo by zero")
    return a % b


BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "%": _mod,
    "==": lambda a, b: int(a == b),
    "!=": lambda a, b: int(a != b),
    "<": lambda a, b: int(a < b),
    "<=": lambda a, b: int(a <= b),
    ">": lambda a, b: int(a > b),
    ">=": lambda a, b: int(a >= b),
    "&&": lambda a, b: int(bool(a) and bool(b)),
    "||": lambda a, b: int(bool(a) or bool(b)),
    "->": lambda a, b: int((not a) or bool(b)),
    "<->": lambda a, b: int(bool(a) == bool(b)),
}

BOOL_OPS = {"==", "!=", "<", "<=", ">", ">=", "&&", "||", "->", "<->"}


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __call__(self, env) -> int:
        if self.op == "&&":
            return int(bool(self.left(env)) and bool(self.right(env)))
        if self.op == "||":
            return int(bool(self.left(env)) or bool(self.right(env)))
        return BINOPS[self.op](self.left(env), self.right(env))

    def free_vars(self) -> set[str]:
        return self.left.free_vars() | self.right.free_vars()

    def subst(self, mapping):
        return BinOp(self.op, self.left.subst(mapping), self.right.subst(mapping))


@dataclass(frozen=True)
class UnOp(Expr):
    op: str  # "-" or "!"
    arg: Expr

    def __call__(self, env) -> int:
        v = self.arg(env)
        return -v if self.op == "-" else int(not v)

    def free_vars(self) -> set[str]:
        return self.arg.free_vars()

    def subst(self, mapping):
        return UnOp(self.op, self.arg.subst(mapping))


TRUE = Num(1)
FALSE = Num(0)


def conj(*bs: Expr) -> Expr:
    out = None
    for b in bs:
        out = b if out is None else BinOp("&&", out, b)
    return out if out is not None else TRUE


def neg(b: Expr) -> Expr:
    return UnOp("!", b)


def iff(a: Expr, b: Expr) -> Expr:
    return BinOp("<->", a, b)


def eval_expr(e: Expr, env) -> int:
    return e(env)


def eval_bexpr(b: Expr, env) -> bool:
    return bool(b(env))


# ---------------------------------------------------------------------------
# commands


@dataclass(frozen=True)
class Command:
    def children(self) -> Iterator["Command"]:
        return iter(())


@dataclass(frozen=True)
class Skip(Command):
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Abort(Command):
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Assign(Command):
    var: str
    expr: Expr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Sample(Command):
    var: str
    dist: str
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class KetExpr:
    """Initial state of a register: a named state vector or a basis index."""

    name: str | None = None
    index: Expr | None = None


@dataclass(frozen=True)
class QInit(Command):
    regs: tuple
    ket: KetExpr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Apply(Command):
    regs: tuple
    unitary: str
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Measure(Command):
    var: str
    meas: str
    regs: tuple
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Seq(Command):
    cmds: tuple
    span: Span = field(default=NOSPAN, compare=False)

    def children(self):
        return iter(self.cmds)


@dataclass(frozen=True)
class If(Command):
    cond: Expr
    then: Command
    orelse: Command
    span: Span = field(default=NOSPAN, compare=False)

    def children(self):
        return iter((self.then, self.orelse))


@dataclass(frozen=True)
class While(Command):
    cond: Expr
    body: Command
    span: Span = field(default=NOSPAN, compare=False)

    def children(self):
        return iter((self.body,))


def seq(*cmds: Command) -> Command:
    """Flattening sequence constructor; an empty sequence is skip."""
    flat: list[Command] = []
    for c in cmds:
        if isinstance(c, Seq):
            flat.extend(c.cmds)
        else:
            flat.append(c)
    if not flat:
        return Skip()
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


def statements(c: Command) -> list[Command]:
    """The top-level statement list of c (skip gives an empty list)."""
    if isinstance(c, Seq):
        return list(c.cmds)
    if isinstance(c, Skip):
        return []
    return [c]


def walk(c: Command) -> Iterator[Command]:
    yield c
    for ch in c.children():
        yield from walk(ch)


def mod_vars(c: Command) -> set[str]:
    """Classical variables syntactically assigned by c."""
    out = set()
    for n in walk(c):
        if isinstance(n, (Assign, Sample, Measure)):
            out.add(n.var)
    return out


def classical_vars(c: Command) -> set[str]:
    out = set()
    for n in walk(c):
        if isinstance(n, (Assign, Sample, Measure)):
            out.add(n.var)
        if isinstance(n, Assign):
            out |= n.expr.free_vars()
        if isinstance(n, (If, While)):
            out |= n.cond.free_vars()
        if isinstance(n, QInit) and n.ket.index is not None:
            out |= n.ket.index.free_vars()
    return out


def quantum_vars(c: Command) -> set[str]:
    out = set()
    for n in walk(c):
        if isinstance(n, (QInit, Apply, Measure)):
            out |= set(n.regs)
    return out


def has_loop(c: Command) -> bool:
    return any(isinstance(n, While) for n in walk(c))


def has_abort(c: Command) -> bool:
    return any(isinstance(n, Abort) for n in walk(c))
