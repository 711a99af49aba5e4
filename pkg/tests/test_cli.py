import csv
import io
import json
import shutil
import subprocess
from importlib import resources

import pytest

from ri_switch.cli import main

POLICY_DIR = resources.files("ri_switch.policies")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_dump_dot(capsys):
    code, out, _ = run(capsys, "dump-dot", str(POLICY_DIR / "normal.vdta"))
    assert code == 0 and out.startswith('digraph "normal"')


def test_dump_dot_reports_dsl_errors(capsys, tmp_path):
    bad = tmp_path / "bad.vdta"
    bad.write_text("policy broken\ninputs\n")
    code, _, err = run(capsys, "dump-dot", str(bad))
    assert code == 2 and "error" in err


def test_simulate_and_check_trace(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "simulate", "--seed", "3", "--trace", str(trace), "--audit")
    summary = json.loads(out)
    assert code == 0 and summary["audit_passed"] and summary["mode"] == "ri"
    assert summary["mode_pct"]["normal"] == 100.0
    code, out, _ = run(capsys, "check-trace", str(trace))
    assert code == 0 and json.loads(out)["passed"]

    rows = [json.loads(line) for line in trace.read_text().splitlines()]
    rows[40]["released"]["output"] = None
    trace.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    code, out, _ = run(capsys, "check-trace", str(trace))
    report = json.loads(out)
    assert code == 1 and not report["passed"]
    assert report["cars"]["0"]["snd"]["first_violation"] == 40


def test_check_trace_with_policy_dir(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    run(capsys, "simulate", "--seed", "1", "--trace", str(trace))
    code, out, _ = run(capsys, "check-trace", str(trace), "--policies", str(POLICY_DIR),
                       "--order", "normal,stopping,cautious", "--witness")
    assert code == 0
    assert json.loads(out)["cars"]["0"]["snd_witness"]["passed"]
    code, _, _ = run(capsys, "check-trace", str(trace), "--policies", str(tmp_path))
    assert code == 2


def test_simulate_scenario_file(capsys, tmp_path):
    sc = tmp_path / "s.toml"
    sc.write_text("car_count = 2\nped_count = 1\nmax_ticks = 400\n")
    code, out, _ = run(capsys, "simulate", "--scenario", str(sc), "--mode", "bare", "--seed", "4")
    s = json.loads(out)
    assert code == 0 and (s["cars"], s["peds"], s["seed"], s["mode"]) == (2, 1, 4, "bare")


def test_overhead_stub(capsys):
    code, out, _ = run(capsys, "overhead", "--stub", "--trials", "1", "--ticks", "30")
    rep = json.loads(out)
    assert code == 0 and rep["stub"] and rep["ticks"] == 30


def test_scaling(capsys):
    code, out, err = run(capsys, "scaling", "--counts", "1,2", "--ticks", "3")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["copies"] for r in rows] == ["1", "2"]
    assert "r_squared" in err


def test_run_tables(capsys, tmp_path, monkeypatch):
    plan = tmp_path / "plan.toml"
    plan.write_text("cars = [1]\npeds = [0]\ntrials = 2\nmax_ticks = 100\n")
    monkeypatch.setenv("RI_SEED", "5")
    code, out, err = run(capsys, "run-tables", "--plan", str(plan), "--out", str(tmp_path / "res"))
    assert code == 0
    assert (tmp_path / "res" / "table1.csv").exists() and (tmp_path / "res" / "table2.csv").exists()
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [(r["scenario"], r["trials"]) for r in rows] == [("bare", "2"), ("ri", "2")]
    assert "crash=" in err


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])


@pytest.mark.skipif(shutil.which("ri-switch") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["ri-switch", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run-tables", "overhead", "scaling", "check-trace", "simulate", "dump-dot"):
        assert cmd in proc.stdout
    proc = subprocess.run(["ri-switch", "run-tables", "--help"], capture_output=True, text=True)
    assert "--full-scale" in proc.stdout
