"""Proof checking: run a script's steps depth-first over the goal tree."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..assertions import AssertionReader
from ..errors import CqError, MissingWitness, RuleMismatch
from .judgment import CheckOpts, Context, Judgment
from .oracle import load_probes
from .rules import FAMILY_RULES, apply_rule, entail_side
from .script import ProofScript, Step

VERIFIED = "Verified"
ASSUMED = "VerifiedWithAssumptions"
FAILED = "Failed"


@dataclass
class StepReport:
    path: str
    rule: str
    goal: str
    status: str  # ok, failed, error, not-run, open
    sides: list = field(default_factory=list)
    assumptions: list = field(default_factory=list)
    evidence: list = field(default_factory=list)
    error: str = ""
    line: int = 0
    subgoals: int = 0

    def to_json(self) -> dict:
        return {"path": self.path, "rule": self.rule, "line": self.line, "goal": self.goal,
                "status": self.status, "sideConditions": [s.to_json() for s in self.sides],
                "assumptions": self.assumptions, "evidence": self.evidence, "error": self.error,
                "subgoals": self.subgoals}


@dataclass
class CheckReport:
    goal: str
    steps: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [s for s in self.steps if s.status in ("failed", "error", "open")]

    @property
    def assumptions(self) -> list:
        return [a for s in self.steps for a in s.assumptions]

    @property
    def verdict(self) -> str:
        if self.failures:
            return FAILED
        return ASSUMED if self.assumptions else VERIFIED

    @property
    def hast(self) -> list:
        return [e for s in self.steps for e in s.evidence if e.get("kind") == "hast"]

    @property
    def residuals(self) -> dict:
        out = {}
        for s in self.steps:
            for e in s.evidence:
                if "maxResidual" in e:
                    out[f"{s.path}:{e['kind']}"] = e["maxResidual"]
        return out

    def to_json(self) -> dict:
        return {"goal": self.goal, "verdict": self.verdict, "assumptions": self.assumptions,
                "hast": self.hast, "residuals": self.residuals,
                "failures": [f"{s.path} {s.rule}: {s.error or 'side condition failed'}" for s in self.failures],
                "steps": [s.to_json() for s in self.steps]}


def build_context(script: ProofScript, opts: CheckOpts | None = None):
    """Context and top-level judgment of a parsed script."""
    opts = opts or CheckOpts()
    if script.module is None:
        raise MissingWitness("proof script does not `load` a program file")
    mod = script.module
    decls = mod.decls
    reader = AssertionReader(decls)
    for item in script.defs_text:
        if item[0] == "file":
            reader.read_file(item[1])
        else:
            reader.defs[item[1]] = reader.assertion(item[2])
    ctx = Context(decls, mod.program(script.prog1), mod.program(script.prog2), opts, reader.defs)
    if script.probes_path:
        ctx.probes = load_probes(script.probes_path, ctx)
    goal = Judgment(ctx.reader.assertion(script.pre), ctx.prog1.body, ctx.prog2.body,
                    ctx.reader.assertion(script.post))
    return ctx, goal


class _Checker:
    def __init__(self, ctx, report: CheckReport):
        self.ctx = ctx
        self.rep = report

    def close(self, goals: list, path: str) -> list:
        """Discharge goals whose programs are both skip by entailment of post below pre."""
        out = []
        for g in goals:
            if g.closed_programs:
                side = entail_side(self.ctx, g.post, g.pre, "post below pre")
                self.rep.steps.append(StepReport(f"{path}.close", "Close", str(g)[:240],
                                                 "ok" if side.ok else "failed", [side]))
            else:
                out.append(g)
        return out

    def run(self, steps: list, goals: list, path: str) -> list:
        pending = list(goals)
        for n, step in enumerate(steps):
            here = f"{path}.{n + 1}"
            pending = self.close(pending, here)
            if not pending:
                self.rep.steps.append(StepReport(here, step.rule, "", "error", error="no open goal", line=step.line))
                self.skip(steps[n + 1:], here)
                return []
            goal = pending.pop(0)
            sr = StepReport(here, step.rule, str(goal)[:240], "ok", line=step.line)
            self.rep.steps.append(sr)
            try:
                out = apply_rule(goal, step, self.ctx)
            except (RuleMismatch, MissingWitness) as exc:
                sr.status, sr.error = "error", f"{type(exc).__name__}: {exc}"
                self.skip(steps[n + 1:], here)
                return [goal] + pending
            except CqError as exc:
                sr.status, sr.error = "error", f"{type(exc).__name__}: {exc}"
                self.skip(steps[n + 1:], here)
                return [goal] + pending
            sr.sides, sr.assumptions, sr.evidence = out.sides, out.assumptions, out.evidence
            sr.subgoals = len(out.subgoals)
            if not out.ok:
                sr.status = "failed"
            subs = out.subgoals
            blocks = step.blocks
            if len(blocks) == 1 and step.rule in FAMILY_RULES:
                blocks = blocks * len(subs)
            if len(blocks) > len(subs):
                sr.status, sr.error = "error", f"{len(blocks)} blocks for {len(subs)} premises"
                blocks = blocks[:len(subs)]
            for b, (block, sub) in enumerate(zip(blocks, subs)):
                left = self.close(self.run(block, [sub], f"{here}.{b + 1}"), f"{here}.{b + 1}")
                self.open(left, f"{here}.{b + 1}")
            pending = subs[len(blocks):] + pending
        return self.close(pending, f"{path}.end")

    def skip(self, steps: list, path: str):
        for k, st in enumerate(steps):
            self.rep.steps.append(StepReport(f"{path}+{k + 1}", st.rule, "", "not-run", line=st.line))

    def open(self, goals: list, path: str):
        for g in goals:
            self.rep.steps.append(StepReport(path, "-", str(g)[:240], "open", error="goal left unproved"))


def check_proof(script: ProofScript, opts: CheckOpts | None = None) -> CheckReport:
    """Check every step; failures are collected and the overall verdict is
    Verified, VerifiedWithAssumptions or Failed."""
    ctx, goal = build_context(script, opts)
    return check_goal(goal, script.steps, ctx)


def check_goal(goal: Judgment, steps: list, ctx) -> CheckReport:
    rep = CheckReport(str(goal)[:240])
    chk = _Checker(ctx, rep)
    chk.open(chk.run(steps, [goal], "1"), "1")
    return rep


def check_file(path: str, opts: CheckOpts | None = None) -> CheckReport:
    from .script import load_script
    return check_proof(load_script(path), opts)


__all__ = ["CheckReport", "StepReport", "Step", "build_context", "check_proof", "check_goal", "check_file",
           "VERIFIED", "ASSUMED", "FAILED"]
