from __future__ import annotations

import argparse
import dataclasses
import filecmp
import json
import subprocess
import sys
from pathlib import Path

import pytest

from inertia_uc.case import dump_case
from inertia_uc.cli import DEFAULTS, EXIT_CASE, EXIT_INFEASIBLE, EXIT_OK, EXIT_TOLERANCE, main, resolve_options
from inertia_uc.desk import random_desk_case, trivial_case

DATA = Path(__file__).resolve().parents[1] / "src" / "inertia_uc" / "data"


def _ns(**kw):
    base = {k: None for k in DEFAULTS} | {"config": None}
    return argparse.Namespace(**(base | kw))


def test_validate_ok(capsys):
    assert main(["validate", "--case", str(DATA / "peaker.json")]) == EXIT_OK
    assert "peaker: ok" in capsys.readouterr().out


def test_malformed_case(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["validate", "--case", str(bad)]) == EXIT_CASE


def test_invalid_case(tmp_path):
    doc = json.loads((DATA / "trivial.json").read_text())
    doc["sgs"][0]["Pmin"] = doc["sgs"][0]["Pmax"] + 1
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["validate", "--case", str(p)]) == EXIT_CASE


def test_infeasible_case(tmp_path):
    case = trivial_case()
    p = tmp_path / "c.json"
    dump_case(dataclasses.replace(case, load={1: (50.0, 500.0)}), p)
    assert main(["solve", "--case", str(p), "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE


def test_node_budget_is_a_tolerance_failure(tmp_path):
    p = tmp_path / "c.json"
    dump_case(random_desk_case(0), p)
    assert main(["solve", "--case", str(p), "--gap", "0", "--nodes", "1", "--out", str(tmp_path / "o")]) == EXIT_TOLERANCE


def test_solve_price_settle_chain(tmp_path):
    case = str(DATA / "peaker.json")
    out = tmp_path / "o"
    assert main(["solve", "--case", case, "--out", str(out), "--check", "--mc-samples", "20000"]) == EXIT_OK
    sched = out / "schedule.json"
    for scheme in ("mp", "achp", "aip"):
        assert main(["price", "--case", case, "--schedule", str(sched), "--scheme", scheme, "--out", str(out)]) == 0
    assert main(["settle", "--case", case, "--schedule", str(sched), "--prices", str(out), "--stem", "achp",
                 "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "settlement_achp.json").read_text())["total_uplift"] == pytest.approx(0.0, abs=1e-6)


def test_simulate_from_energy(capsys, tmp_path):
    traj = tmp_path / "t.csv"
    assert main(["simulate", "--energy", "45000", "--load", "10000", "--dp", "1500", "--trajectory", str(traj)]) == 0
    line = capsys.readouterr().out
    assert float(line.split("rocof")[1].split()[0]) == pytest.approx(-1.0, rel=1e-3)
    assert traj.read_text().startswith("t,df\n")


def test_simulate_needs_an_outage():
    assert main(["simulate", "--energy", "45000", "--load", "10000"]) == EXIT_CASE


def test_flag_beats_env_beats_config(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gap": 0.1, "seed": 7, "allocation": "first-hour"}))
    monkeypatch.setenv("INERTIA_UC_SEED", "5")
    monkeypatch.setenv("INERTIA_UC_GAP", "0.2")
    opts = resolve_options(_ns(config=str(cfg), gap=0.3))
    assert opts["gap"] == 0.3
    assert opts["seed"] == 5
    assert opts["allocation"] == "first-hour"
    assert opts["nodes"] == DEFAULTS["nodes"]


def test_env_lists(monkeypatch):
    monkeypatch.setenv("INERTIA_UC_ETA", "0.1,0.2")
    monkeypatch.setenv("INERTIA_UC_SCENARIOS", "base mp")
    opts = resolve_options(_ns())
    assert opts["eta"] == [0.1, 0.2] and opts["scenarios"] == ["base", "mp"]


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gapp": 0.1}))
    assert main(["validate", "--case", str(DATA / "peaker.json"), "--config", str(cfg)]) == EXIT_CASE


def test_env_reaches_command(tmp_path, monkeypatch):
    monkeypatch.setenv("INERTIA_UC_OUT", str(tmp_path / "from_env"))
    assert main(["solve", "--case", str(DATA / "trivial.json")]) == EXIT_OK
    assert (tmp_path / "from_env" / "schedule.json").exists()


def test_scaling_error_in_run_matrix(tmp_path):
    out = tmp_path / "o"
    rc = main(["run-matrix", "--case", str(DATA / "trivial.json"), "--eta", "0.3", "--scenarios", "base",
               "--out", str(out), "--mc-samples", "10000"])
    assert rc == EXIT_CASE
    index = json.loads((out / "manifest.json").read_text())
    assert index["cells"][0]["errors"]


def _tree_equal(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_tree_equal(a / d, b / d) for d in cmp.common_dirs)


def test_run_matrix_is_byte_identical(tmp_path):
    args = ["run-matrix", "--case", str(DATA / "peaker.json"), "--eta", "0.1", "0.2",
            "--mc-samples", "10000"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert _tree_equal(tmp_path / "a", tmp_path / "b")


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "inertia_uc.cli", "validate", "--case", str(DATA / "mingen.json")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "mingen: ok" in r.stdout
