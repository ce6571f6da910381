"""Relational proof checking for classical-quantum programs."""

from .check import ASSUMED, FAILED, VERIFIED, CheckReport, build_context, check_file, check_goal, check_proof
from .coupling import EvalSpec, Witness, check_coupling_condition, parse_witness
from .judgment import CheckOpts, Context, Judgment, Probe
from .oracle import OracleReport, load_probes, random_probes, validity_oracle
from .rules import Outcome, SideCondition, apply_rule
from .script import ProofScript, Step, load_script, parse_script

__all__ = [
    "ASSUMED", "FAILED", "VERIFIED", "CheckOpts", "CheckReport", "Context", "EvalSpec", "Judgment",
    "OracleReport", "Outcome", "Probe", "ProofScript", "SideCondition", "Step", "Witness", "apply_rule",
    "build_context", "check_coupling_condition", "check_file", "check_goal", "check_proof", "load_probes",
    "load_script", "parse_script", "parse_witness", "random_probes", "validity_oracle",
]
