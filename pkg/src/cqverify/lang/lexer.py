"""Tokenizer shared by the program parser and the proof-script reader."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import CqSyntaxError

SYMBOLS = [
    "<->", ":=", "<$", "<-", "*=", "..", "==", "!=", "<=", ">=", "&&", "||", "->",
    "{", "}", "(", ")", "[", "]", ",", ";", ":", "+", "-", "*", "/", "%", "<", ">", "!", "=",
]

_NUM = re.compile(r"\d+(\.\d+)?([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_STRING = re.compile(r'"([^"\\]|\\.)*"')


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, IDENT, SYM, STR, EOF
    text: str
    line: int
    col: int

    def __repr__(self) -> str:
        return f"{self.kind}({self.text!r})@{self.line}:{self.col}"


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    i = 0
    line, col = 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i) or ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        m = _NUM.match(text, i)
        if m:
            toks.append(Token("NUM", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        m = _IDENT.match(text, i)
        if m:
            toks.append(Token("IDENT", m.group(), line, col))
            col += m.end() - i
            i = m.end()
            continue
        m = _STRING.match(text, i)
        if m:
            toks.append(Token("STR", m.group()[1:-1], line, col))
            col += m.end() - i
            i = m.end()
            continue
        for s in SYMBOLS:
            if text.startswith(s, i):
                toks.append(Token("SYM", s, line, col))
                i += len(s)
                col += len(s)
                break
        else:
            raise CqSyntaxError(f"unexpected character {ch!r}", line, col)
    toks.append(Token("EOF", "", line, col))
    return toks


class TokenStream:
    def __init__(self, toks: list[Token]):
        self.toks = toks
        self.i = 0

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t.kind in ("SYM", "IDENT") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            raise CqSyntaxError(f"expected '{text}', found '{t.text or 'end of input'}'", t.line, t.col)
        return self.next()

    def ident(self) -> Token:
        t = self.peek()
        if t.kind != "IDENT":
            raise CqSyntaxError(f"expected identifier, found '{t.text or 'end of input'}'", t.line, t.col)
        return self.next()

    def error(self, msg: str) -> CqSyntaxError:
        t = self.peek()
        return CqSyntaxError(msg, t.line, t.col)
