"""cqWhile: syntax, declarations, parser, printer and type checker."""

from .ast import (Abort, Apply, Assign, BinOp, Command, Expr, If, KetExpr, Measure, Num, QInit,
                  Sample, Seq, Skip, Span, UnOp, Var, While, classical_vars, conj, eval_bexpr,
                  eval_expr, has_abort, has_loop, iff, mod_vars, neg, quantum_vars, seq,
                  statements, walk)
from .decls import BUILTIN_CONSTS, Decls, Program, Space, enumerate_envs, peq_op, psym_op, swap_op
from .parser import Module, parse, parse_command, parse_expr, parse_file
from .printer import pretty_command, pretty_expr, pretty_module
from .typecheck import Diagnostic, check_decls, check_program, typecheck

__all__ = [
    "Abort", "Apply", "Assign", "BinOp", "Command", "Expr", "If", "KetExpr", "Measure", "Num",
    "QInit", "Sample", "Seq", "Skip", "Span", "UnOp", "Var", "While", "classical_vars", "conj",
    "eval_bexpr", "eval_expr", "has_abort", "has_loop", "iff", "mod_vars", "neg", "quantum_vars",
    "seq", "statements", "walk", "BUILTIN_CONSTS", "Decls", "Program", "Space", "enumerate_envs",
    "peq_op", "psym_op", "swap_op", "Module", "parse", "parse_command", "parse_expr", "parse_file",
    "pretty_command", "pretty_expr", "pretty_module", "Diagnostic", "check_decls", "check_program",
    "typecheck",
]
