"""Proof scripts.

    load "walk.cq";
    assertions "walk.assn";          // optional (define NAME A) forms
    define inv (cls (= x1 x2));
    goal walk ~ walk_meas;
    pre inv; post inv;
    probes "walk.probes.json";       // optional, used by oracle steps
    proof {
      rule While invariant inv;
      rule Assign;
      rule Measure-Sample pre (...) witness diag;
      rule Init-R;
    }

A step is `rule NAME (key value)*` followed by optional `{ ... }` blocks that
prove the rule's premises in order; a single block after a family rule (NMod,
Unbounded-Duality, TruncLimit) is applied to every premise. Without blocks the
premises are pushed in front of the pending goals (depth-first).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..assertions import read_sexprs
from ..errors import CqSyntaxError
from ..lang.parser import parse_file

RULES = {
    "skip": "Skip", "assign": "Assign", "seq": "Seq", "if": "If", "while": "While", "sample": "Sample",
    "measure": "Measure", "measure-sample": "Measure-Sample", "sample-measure": "Measure-Sample",
    "assign-l": "Assign-L", "assign-r": "Assign-R", "if-l": "If-L", "if-r": "If-R",
    "while-l": "While-L", "while-r": "While-R", "sample-l": "Sample-L", "sample-r": "Sample-R",
    "init-l": "Init-L", "init-r": "Init-R", "apply-l": "Apply-L", "apply-r": "Apply-R",
    "measure-l": "Measure-L", "measure-r": "Measure-R", "conseq": "Conseq", "weakconseq": "Conseq",
    "nmod": "NMod", "sample-supp": "Sample-Supp", "splitwp": "SplitWP", "split-wp": "SplitWP",
    "trunclimit": "TruncLimit", "limit": "TruncLimit", "semanticoracle": "SemanticOracle",
    "oracle": "SemanticOracle", "unbounded-duality": "Unbounded-Duality", "wp-l": "wp-L", "wp-r": "wp-R",
}


@dataclass
class Step:
    rule: str
    args: dict = field(default_factory=dict)  # key -> atom string or s-expression
    blocks: list = field(default_factory=list)  # list of list[Step]
    line: int = 0

    def text(self, key: str):
        return self.args.get(key)

    def __str__(self) -> str:
        parts = [f"rule {self.rule}"]
        for k, v in self.args.items():
            parts.append(f"{k} {_show(v)}")
        return " ".join(parts)


def _show(v) -> str:
    if isinstance(v, list):
        return "(" + " ".join(_show(x) for x in v) + ")"
    if isinstance(v, tuple) and v and v[0] == "raw":
        return "{" + v[1] + "}"
    return str(v)


@dataclass
class ProofScript:
    module_path: str | None
    prog1: str
    prog2: str
    pre: object
    post: object
    steps: list
    defs_text: list = field(default_factory=list)  # assertion-file contents and define forms, in order
    probes_path: str | None = None
    base_dir: str = "."
    module: object = None


# ---------------------------------------------------------------------------
# scanner: strings, balanced s-expressions, atoms and the punctuation { } ; ~


def _scan(text: str) -> list:
    toks = []
    i, n, line = 0, len(text), 1
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
        elif ch.isspace():
            i += 1
        elif text.startswith("//", i) or ch == "#":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == '"':
            j = text.find('"', i + 1)
            if j < 0:
                raise CqSyntaxError("unterminated string", line, 0)
            toks.append(("str", text[i + 1:j], line))
            i = j + 1
        elif ch == "(":
            depth, j, start = 0, i, line
            while j < n:
                c = text[j]
                if c == "(":
                    depth += 1
                elif c == ")":
                    depth -= 1
                    if depth == 0:
                        break
                elif c == "\n":
                    line += 1
                j += 1
            if depth:
                raise CqSyntaxError("unbalanced '(' in proof script", start, 0)
            form = read_sexprs(text[i:j + 1])
            toks.append(("sexpr", form[0], start))
            i = j + 1
        elif ch in "{};~":
            toks.append((ch, ch, line))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in '(){};~"':
                j += 1
            toks.append(("atom", text[i:j], line))
            i = j
    toks.append(("eof", "", line))
    return toks


class _Reader:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        if t[0] != "eof":
            self.i += 1
        return t

    def expect(self, kind):
        t = self.next()
        if t[0] != kind:
            raise CqSyntaxError(f"expected '{kind}', found {t[1]!r}", t[2], 0)
        return t

    def value(self):
        t = self.next()
        if t[0] in ("sexpr", "atom", "str"):
            return t[1]
        raise CqSyntaxError(f"expected a value, found {t[1]!r}", t[2], 0)

    def steps(self, closing: str) -> list:
        out = []
        while True:
            t = self.peek()
            if t[0] == closing:
                self.next()
                return out
            if t[0] == ";":
                self.next()
                continue
            if t[0] == "eof":
                raise CqSyntaxError("unterminated proof block", t[2], 0)
            out.append(self.step())

    def step(self) -> Step:
        t = self.next()
        if t[0] != "atom" or t[1] != "rule":
            raise CqSyntaxError(f"expected 'rule', found {t[1]!r}", t[2], 0)
        name = self.expect("atom")
        canon = RULES.get(name[1].lower())
        if canon is None:
            raise CqSyntaxError(f"unknown rule '{name[1]}'", name[2], 0)
        st = Step(canon, line=t[2])
        while self.peek()[0] in ("atom", "str"):
            key = self.next()[1]
            if self.peek()[0] in (";", "{", "eof", "}"):
                st.args[key] = True
            else:
                st.args[key] = self.value()
        while self.peek()[0] == "{":
            self.next()
            st.blocks.append(self.steps("}"))
        if self.peek()[0] == ";":
            self.next()
        return st


def parse_script(text: str, base_dir: str = ".") -> ProofScript:
    r = _Reader(_scan(text))
    sc = ProofScript(None, "", "", None, None, [], base_dir=base_dir)
    while r.peek()[0] != "eof":
        t = r.next()
        if t[0] == ";":
            continue
        if t[0] != "atom":
            raise CqSyntaxError(f"unexpected {t[1]!r}", t[2], 0)
        kw = t[1]
        if kw == "load":
            sc.module_path = r.expect("str")[1]
        elif kw == "assertions":
            path = os.path.join(base_dir, r.expect("str")[1])
            with open(path, encoding="utf-8") as fh:
                sc.defs_text.append(("file", fh.read()))
        elif kw == "define":
            name = r.expect("atom")[1]
            sc.defs_text.append(("define", name, r.value()))
        elif kw == "goal":
            sc.prog1 = r.expect("atom")[1]
            r.expect("~")
            sc.prog2 = r.expect("atom")[1]
        elif kw == "pre":
            sc.pre = r.value()
        elif kw == "post":
            sc.post = r.value()
        elif kw == "probes":
            sc.probes_path = os.path.join(base_dir, r.expect("str")[1])
        elif kw == "proof":
            r.expect("{")
            sc.steps = r.steps("}")
        else:
            raise CqSyntaxError(f"unknown script keyword '{kw}'", t[2], 0)
    missing = [k for k, v in (("goal", sc.prog1), ("pre", sc.pre), ("post", sc.post)) if not v]
    if missing:
        raise CqSyntaxError(f"proof script lacks {', '.join(missing)}", 0, 0)
    if sc.module_path is not None:
        sc.module = parse_file(os.path.join(base_dir, sc.module_path))
    return sc


def load_script(path: str) -> ProofScript:
    with open(path, encoding="utf-8") as fh:
        return parse_script(fh.read(), os.path.dirname(os.path.abspath(path)))
