import csv
import io
import json
import subprocess
import sys
from fractions import Fraction as F
from pathlib import Path

import numpy as np
import pytest

from mechlab.cli import run_command
from mechlab.model import validate_problem
from mechlab.scenario import (
    ScenarioError,
    dump_scenario,
    generate_problem,
    load_family,
    load_scenario,
    parse_scenario,
    problems_equal,
)

FIXTURES = Path(__file__).parent / "fixtures"
GOOD = FIXTURES / "good.json"
FAMILY = FIXTURES / "binary_family.json"
GENERATED = FIXTURES / "generated.json"


def good_dict():
    return json.loads(GOOD.read_text())


def write(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return path


def cli(capsys, *argv):
    code = run_command([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_load_good_fixture():
    scen = load_scenario(GOOD)
    p = scen.problem
    assert (p.n, p.m, p.states) == (2, 2, ("low", "high"))
    assert p.c[0, 0, 1, 1, 0] == 0.25 and p.c[1, 1, 0, 0, 1] == 0.5
    assert validate_problem(p).passed


def test_prior_not_normalized(tmp_path):
    data = good_dict()
    data["prior"]["table"][1][1][1] = "0.299"
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, data))
    assert exc.value.code == "prior not normalized"


def test_negative_externality_rejected(tmp_path):
    data = good_dict()
    data["c"][0]["value"] = -0.1
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, data))
    assert exc.value.code in {"tensor out of bounds", "schema violation"}
    assert "nonnegative" in str(exc.value) or "minimum" in str(exc.value)


def test_parse_error_has_position(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, '{\n  "n": 2,\n  oops\n}'))
    assert exc.value.code == "parse error" and exc.value.where["line"] == 3


def test_unknown_key_rejected_with_pointer(tmp_path):
    data = good_dict()
    data["extra"] = 1
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, data))
    assert exc.value.code == "schema violation"
    data = good_dict()
    data["c"][0]["colour"] = 1
    with pytest.raises(ScenarioError) as exc:
        load_scenario(write(tmp_path, data))
    assert exc.value.where["pointer"] == "/c/0"


@pytest.mark.parametrize("exact", [False, True])
def test_round_trip_is_lossless(exact):
    scen = load_scenario(GOOD, exact=exact)
    again = parse_scenario(json.dumps(dump_scenario(scen)), exact=exact)
    assert problems_equal(scen.problem, again.problem)
    assert dump_scenario(again) == dump_scenario(scen)


def test_generator_scenario_and_round_trip():
    scen = load_scenario(GENERATED)
    assert scen.generator["seed"] == 11
    again = parse_scenario(json.dumps(dump_scenario(scen)))
    assert problems_equal(scen.problem, again.problem)


@pytest.mark.parametrize("seed", range(10))
def test_generated_instances_validate(seed):
    n = 2 + seed % 3
    problem = generate_problem(n, 2 + seed % 2, 2, M=F(3, 2), seed=seed, density=0.4, exact=bool(seed % 2))
    assert validate_problem(problem).passed
    assert problem.u.max() <= problem.M


def test_generation_is_seeded():
    a, b = generate_problem(3, 2, seed=9), generate_problem(3, 2, seed=9)
    assert problems_equal(a, b)
    assert not problems_equal(a, generate_problem(3, 2, seed=10))


def test_family_file():
    fam = load_family(FAMILY)
    assert np.allclose(fam.Q, [[0.8, 0.2], [0.4, 0.6]]) and fam.k == 1


def test_cli_validate(capsys, tmp_path):
    code, out, _ = cli(capsys, "validate", GOOD)
    assert code == 0 and json.loads(out)["passed"] is True
    data = good_dict()
    data["u"][0][0][0] = 1.5
    code, out, _ = cli(capsys, "validate", write(tmp_path, data))
    assert code == 1 and json.loads(out)["failures"][0]["code"] == "tensor out of bounds"


def test_cli_errors_are_json_on_stderr(capsys, tmp_path):
    code, out, err = cli(capsys, "solve", tmp_path / "missing.json", "--posterior", "0.5,0.5")
    assert code == 2 and out == "" and json.loads(err)["error"] == "io error"
    code, _, err = cli(capsys, "solve", GOOD, "--signals", "a,zzz")
    assert code == 2 and json.loads(err)["error"] == "invalid signal"


def test_cli_solve_and_vcg(capsys):
    code, out, _ = cli(capsys, "solve", GOOD, "--posterior", "1,0")
    sol = json.loads(out)
    assert code == 0 and sol["value"] == pytest.approx(sum(sol["per_buyer"]))
    code, out, _ = cli(capsys, "vcg", GOOD, "--signals", "a,b", "--rational")
    res = json.loads(out)
    assert code == 0 and all(x <= 0 for x in res["transfers"])
    assert all(min(pair) >= 1 for pair in res["matching"])


def test_cli_calibrate_and_simulate(capsys):
    code, out, _ = cli(capsys, "calibrate", GOOD)
    cal = json.loads(out)
    assert code == 0 and set(cal) == {"delta", "binding_triple", "gap", "bound"}
    code, out, _ = cli(capsys, "simulate", GOOD, "--signals", "b,a", "--rational")
    run = json.loads(out)
    assert code == 0 and run["accounting_residual"] == 0


def test_cli_replica_rows(capsys):
    code, out, _ = cli(capsys, "replica", FAMILY, "--n-range", "2:10", "--k", "1", "--no-runtime")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 9
    assert list(rows[0]) == ["n", "max_nu", "sum_xi_bound", "worst_ic_margin", "deficit", "runtime_s"]


def test_cli_out_dir(capsys, tmp_path):
    code, out, _ = cli(capsys, "inspect", GOOD, "--buyer", "1", "--signal", "a", "--out", tmp_path)
    assert code == 0 and out == ""
    data = json.loads((tmp_path / "inspect.json").read_text())
    assert sum(np.asarray(b["table"]).sum() for b in data["beliefs"][:1]) == pytest.approx(1)


def test_cli_canonical_reparses(capsys, tmp_path):
    code, out, _ = cli(capsys, "canonical", GOOD)
    assert code == 0
    assert problems_equal(load_scenario(GOOD).problem, load_scenario(write(tmp_path, out)).problem)


def test_cli_report(capsys):
    code, out, _ = cli(capsys, "report", GOOD, "--rational")
    rep = json.loads(out)
    assert code == 0 and len(rep["profiles"]) == 4
    assert all(row["accounting_residual"] == 0 for row in rep["profiles"])


def test_verify_is_byte_identical(tmp_path):
    cmd = [sys.executable, "-m", "mechlab.cli", "verify", str(GOOD), "--seed", "7"]
    a = subprocess.run(cmd, capture_output=True, text=True)
    b = subprocess.run(cmd, capture_output=True, text=True)
    assert a.returncode == 0, a.stderr
    assert a.stdout == b.stdout and json.loads(a.stdout)["passed"] is True
