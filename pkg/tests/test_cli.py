import csv
import json
import subprocess
import sys
from fractions import Fraction

import pytest

from unrect.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from unrect.construction import generate_schedule


@pytest.fixture(scope="module")
def sched_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "s.json"
    assert main(["build", "--depth", "4", "--out", str(p)]) == EXIT_OK
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_build_and_validate(sched_file, tmp_path):
    out = tmp_path / "v.json"
    assert main(["validate", "--schedule", str(sched_file), "--out", str(out)]) == EXIT_OK
    d = json.loads(out.read_text())
    assert d["certificate"]["ok"] and d["K"] == 4


def test_failing_schedule_exits_2(tmp_path):
    out = tmp_path / "bad.json"
    assert main(["build", "--depth", "3", "--rho-base", "1", "--rho-ratio", "1/3"]) == EXIT_FAIL
    # the same schedule built without requirements is rejected by validate
    s = generate_schedule(K=3, rho_rule=(Fraction(1), Fraction(1, 3)), require=())
    s.certificate = None
    out.write_text(s.dumps())
    assert main(["validate", "--schedule", str(out)]) == EXIT_FAIL


def test_malformed_input_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert main(["validate", "--schedule", str(bad)]) == EXIT_USAGE
    assert "line 1" in capsys.readouterr().err
    assert main(["validate", "--schedule", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE


def test_eval_grid_rows(sched_file, tmp_path):
    out = tmp_path / "g.csv"
    assert main(["eval-grid", "--schedule", str(sched_file), "--grid", "5", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0][:3] == ["x", "y", "h"]
    assert len(rows) - 1 == 25


def test_eval_grid_rejects_bad_depth(sched_file):
    assert main(["eval-grid", "--schedule", str(sched_file), "--depth", "9"]) == EXIT_USAGE


def test_determinism_and_jobs(sched_file, tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    args = ["nondiff-map", "--schedule", str(sched_file), "--grid", "3"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert main(args + ["--out", str(c), "--jobs", "2"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    assert len(read_csv(a)) == 10


def test_env_override(sched_file, tmp_path, monkeypatch):
    out = tmp_path / "g.csv"
    monkeypatch.setenv("UNRECT_GRID", "3")
    assert main(["eval-grid", "--schedule", str(sched_file), "--out", str(out)]) == EXIT_OK
    assert len(read_csv(out)) == 10


def test_witness(sched_file, capsys):
    x = json.loads(sched_file.read_text())["stages"][0]["x"]
    assert main(["witness", "--schedule", str(sched_file), "--stage", "1", "--point", ",".join(x)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["ok"] and out["defect"] >= out["bound"]
    # far from strip 1 there is no witness
    assert main(["witness", "--schedule", str(sched_file), "--stage", "1", "--point", "0,0"]) == EXIT_FAIL
    assert "no witness" in capsys.readouterr().err


def test_curve_reports(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["curve-report", "--n-curves", "3", "--depth", "4", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == ["curve", "check", "lhs", "rhs", "status", "error_bar", "note"]
    assert not any(r[4] == "FAIL" for r in rows[1:])
    out = tmp_path / "m.csv"
    assert main(["martingale-report", "--n-curves", "3", "--out", str(out)]) == EXIT_OK
    assert any(r[1].startswith("doob") for r in read_csv(out))


def test_console_script_runs(sched_file):
    r = subprocess.run([sys.executable, "-m", "unrect.cli", "validate", "--schedule", str(sched_file)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and '"certificate"' in r.stdout


def test_delta_flag_marks_inadmissible_curves(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["curve-report", "--n-curves", "2", "--depth", "3", "--delta", "0.0001", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert any(r[1] == "hypothesis_cone" and r[4] == "N/A" for r in rows)
