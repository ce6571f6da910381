import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cqverify.cli import run_command
from cqverify.cqstate import CqState, Env
from cqverify.examples import CORPUS_DIR
from cqverify.transport import DualCandidate, TransportInstance

GOLDEN = json.load(open(os.path.join(os.path.dirname(__file__), "golden", "cli_keys.json")))


def corpus(name: str) -> str:
    return os.path.join(CORPUS_DIR, name)


def run_json(capsys, *argv):
    code = run_command([*argv, "--json"])
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


@pytest.fixture
def tv_instance(tmp_path):
    """Classical instance with cost [x != y] between (1/2, 1/2) and (1/2, 1/2)."""
    d1 = CqState(1, {Env(x=0): np.eye(1) / 2, Env(x=1): np.eye(1) / 2})
    d2 = CqState(1, {Env(y=0): np.eye(1) / 2, Env(y=1): np.eye(1) / 2})
    blocks = {(Env(x=i), Env(y=j)): np.eye(1) * float(i != j) for i in range(2) for j in range(2)}
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(TransportInstance.from_blocks(d1, d2, blocks).to_json()))
    dual = DualCandidate({Env(x=0): np.zeros((1, 1)), Env(x=1): np.eye(1)},
                         {Env(y=0): np.zeros((1, 1)), Env(y=1): -np.eye(1)})
    dpath = tmp_path / "dual.json"
    dpath.write_text(json.dumps(dual.to_json()))
    bad = TransportInstance.from_blocks(d1, CqState(1, {Env(y=0): np.eye(1) / 2, Env(y=1): np.eye(1) * 0.4}),
                                        blocks)
    bpath = tmp_path / "bad.json"
    bpath.write_text(json.dumps(bad.to_json()))
    return str(path), str(dpath), str(bpath)


def test_parse(capsys):
    code, out = run_json(capsys, "parse", corpus("walk.cq"))
    assert code == 0 and sorted(out) == GOLDEN["parse"]
    assert {p["name"] for p in out["programs"]} == {"walk", "walk_meas"}


def test_parse_syntax_error_exits_one(tmp_path, capsys):
    p = tmp_path / "bad.cq"
    p.write_text("prog p { x := ; }")
    assert run_command(["parse", str(p)]) == 1


def test_run(capsys):
    code, out = run_json(capsys, "run", corpus("rejection.cq"), "--prog", "rejection", "--env", "x1=0")
    assert code == 0 and sorted(out) == GOLDEN["run"]
    assert out["output_trace"] == pytest.approx(1.0, abs=1e-9)


def test_wp(tmp_path, capsys):
    post = tmp_path / "post.assn"
    post.write_text("(pguard (P1 q1) (zero))")
    out_file = tmp_path / "wp.json"
    code, out = run_json(capsys, "wp", "--prog", corpus("rejection.cq"), "--name", "rejection",
                         "--post", str(post), "--out", str(out_file))
    assert code == 0 and sorted(out) == GOLDEN["wp"]
    assert all(out["loopConverged"].values())
    assert json.loads(out_file.read_text())["vars"] == out["vars"]


def test_transport_commands(tv_instance, capsys):
    inst, dual, bad = tv_instance
    code, out = run_json(capsys, "transport", "solve", inst)
    assert code == 0 and sorted(out) == GOLDEN["transport solve"]
    assert out["status"] == "Certified" and out["primalValue"] == pytest.approx(0, abs=1e-8)
    code, out = run_json(capsys, "transport", "dual-check", inst, "--dual", dual)
    assert sorted(out) == GOLDEN["transport dual-check"]
    assert code == 0 and out["feasible"] is True and out["dualValue"] == pytest.approx(0)
    code, out = run_json(capsys, "transport", "gap", inst)
    assert code == 0 and sorted(out) == GOLDEN["transport gap"]
    code, out = run_json(capsys, "transport", "solve", bad)
    assert code == 1 and sorted(out) == GOLDEN["transport mass-mismatch"] and out["status"] == "MassMismatch"


def test_check_exit_codes(capsys):
    code, out = run_json(capsys, "check", "--proof", corpus("walk.prf"))
    assert code == 0 and sorted(out) == GOLDEN["check"] and out["verdict"] == "Verified"
    code, out = run_json(capsys, "check", "--proof", corpus("bernoulli.prf"))
    assert code == 1 and out["verdict"] == "VerifiedWithAssumptions"


def test_oracle(capsys):
    code, out = run_json(capsys, "oracle", "--proof", corpus("qubit_flip.prf"))
    assert code == 0 and sorted(out) == GOLDEN["oracle"] and out["status"] == "Pass"


def test_examples(capsys):
    code, out = run_json(capsys, "examples")
    assert code == 0 and sorted(out) == GOLDEN["examples list"]
    code, out = run_json(capsys, "examples", "qubit_flip")
    assert code == 0 and sorted(out) == GOLDEN["examples run"] and out["verdict"] == "Verified"


def test_usage_errors(tmp_path, capsys):
    assert run_command(["check", "--proof", str(tmp_path / "missing.prf")]) == 2
    assert run_command(["frobnicate"]) == 2
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert run_command(["transport", "solve", str(junk)]) == 2
    junk.write_text(json.dumps({"delta1": {}}))
    assert run_command(["transport", "solve", str(junk)]) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "cqverify", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
