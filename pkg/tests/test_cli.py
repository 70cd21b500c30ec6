import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from l0opt.cli import dumps, main, validate

from oracles import mean_variance

SAMPLES = Path(__file__).resolve().parent.parent / "samples"
CASES = [
    ("solve", "hansen_richard.json", 0),
    ("solve", "minimize_box.json", 0),
    ("solve", "vi_affine.json", 0),
    ("solve", "project_ball.json", 0),
    ("certify", "interval_unbounded.json", 2),
    ("certify", "interval_bounded_james.json", 0),
    ("decompose", "decompose.json", 0),
    ("extract", "bw_extract.json", 0),
]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("command,name,expect", CASES)
def test_samples_are_deterministic_and_valid(command, name, expect):
    first = run(command, SAMPLES / name)
    second = run(command, SAMPLES / name)
    assert first[0] == expect, first[2]
    assert first[1] == second[1]
    env = json.loads(first[1])
    validate(env, "result")
    assert env["seed"] == 42 and env["command"] == command


def test_thread_count_does_not_change_output():
    a = run("solve", SAMPLES / "minimize_box.json", "--threads", "1")
    b = run("solve", SAMPLES / "minimize_box.json", "--threads", "3")
    assert a[0] == b[0] == 0 and a[1] == b[1]


def test_hansen_richard_sample_matches_kkt():
    code, text, _ = run("solve", SAMPLES / "hansen_richard.json")
    assert code == 0
    problem = json.loads((SAMPLES / "hansen_richard.json").read_text())
    p = np.array(problem["space"]["p"])
    r = np.array(problem["hansen_richard"]["r"])[:, 0]
    x = np.array(json.loads(text)["result"]["minimizer"]["data"])[:, 0]
    for atom, w in zip(problem["algebra"]["atoms"], problem["hansen_richard"]["w"]):
        q = p[atom] / p[atom].sum()
        assert x[atom] == pytest.approx(mean_variance(q, r[atom], w), abs=1e-8)


def test_out_directory_and_csv(tmp_path):
    code, _, _ = run("solve", SAMPLES / "hansen_richard.json", "--out", tmp_path,
                     "--format", "both")
    assert code == 0
    text = (tmp_path / "hansen_richard.result.json").read_text()
    assert text == run("solve", SAMPLES / "hansen_richard.json")[1]
    lines = (tmp_path / "hansen_richard.atoms.csv").read_text().splitlines()
    assert lines[0].startswith("atom,") and len(lines) == 3


def test_schema_violation_names_the_field(tmp_path):
    obj = json.loads((SAMPLES / "minimize_box.json").read_text())
    obj["minimize"]["surprise"] = 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    code, out, err = run("solve", bad)
    assert code == 1 and out == ""
    assert "/minimize" in err


def test_command_must_fit_problem():
    code, _, err = run("certify", SAMPLES / "hansen_richard.json")
    assert code == 1 and "cannot run" in err


def test_missing_input_and_bad_file(tmp_path):
    assert run("solve")[0] == 1
    broken = tmp_path / "x.json"
    broken.write_text("{")
    assert run("solve", broken)[0] == 1


def test_infeasible_problem_exits_with_verdict(tmp_path):
    obj = json.loads((SAMPLES / "hansen_richard.json").read_text())
    obj["hansen_richard"]["r"] = [[2.0]] * 5
    path = tmp_path / "flat.json"
    path.write_text(json.dumps(obj))
    code, out, _ = run("solve", path)
    assert code == 2 and json.loads(out)["status"] == "infeasible"


def test_selftest_passes():
    code, out, _ = run("selftest")
    assert code == 0
    assert all(c["passed"] for c in json.loads(out)["result"]["checks"])


def test_dumps_uses_round_trip_floats():
    text = dumps({"a": [0.1, float("inf"), -float("inf"), 1e300]})
    back = json.loads(text)
    assert back["a"][0] == 0.1 and back["a"][1:3] == ["inf", "-inf"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "l0opt", "certify",
                           str(SAMPLES / "interval_unbounded.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stdout)["status"] == "not_compact"
