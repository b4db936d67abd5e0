import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

CASE_FILE = Path(__file__).resolve().parents[1] / "cases" / "demo_case.json"


def run_cli(*args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "mcoplan.cli", *args],
        capture_output=True, text=True, cwd=cwd,
    )


# module-scoped pipeline directory so the expensive steps run once
@pytest.fixture(scope="module")
def workdir(tmp_path_factory, demo_doc):
    d = tmp_path_factory.mktemp("cli")
    doc = json.loads(json.dumps(demo_doc))
    doc["solver"]["max_iters"] = 2500
    spec = d / "spec.json"
    spec.write_text(json.dumps(doc), encoding="utf-8")
    return d


@pytest.fixture(scope="module")
def built_case(workdir):
    r = run_cli("gen-phantom", "spec.json", "-o", "demo", cwd=workdir)
    assert r.returncode == 0, r.stderr
    r = run_cli("mco", "build-surface", "demo", "--budget", "5", "--gap", "0.05",
                cwd=workdir)
    assert r.returncode == 0, r.stderr
    assert "gap estimate" in r.stdout
    return workdir / "demo"


def test_gen_phantom_prints_dims_and_is_deterministic(workdir):
    r1 = run_cli("gen-phantom", "spec.json", "-o", "det-a", cwd=workdir)
    r2 = run_cli("gen-phantom", "spec.json", "-o", "det-b", cwd=workdir)
    assert r1.returncode == 0 and r2.returncode == 0
    assert "voxels" in r1.stdout and "beamlets" in r1.stdout
    ha = hashlib.sha256((workdir / "det-a" / "dinf.bin").read_bytes()).hexdigest()
    hb = hashlib.sha256((workdir / "det-b" / "dinf.bin").read_bytes()).hexdigest()
    assert ha == hb


def test_usage_errors_exit_1(workdir, built_case):
    r = run_cli("gen-phantom", "missing.json", "-o", "x", cwd=workdir)
    assert r.returncode == 1
    r = run_cli("navigate", "demo", cwd=workdir)  # neither --serve nor --export
    assert r.returncode == 1
    r = run_cli("navigate", ".", cwd=workdir)  # not a case directory
    assert r.returncode == 2


def test_computation_errors_exit_2(workdir, built_case):
    r = run_cli("sparsify", "demo", "--plan", "missing-plan", "--beams", "3",
                "--epsilon", "0.05", cwd=workdir)
    assert r.returncode == 2
    assert "error" in r.stderr.lower()


def test_goal_command(workdir, built_case):
    goals = workdir / "goals.json"
    goals.write_text(json.dumps([
        {"objective": "tumor_dev", "goal_value": 10.0},
        {"objective": "cord_sq", "goal_value": 200.0},
    ]), encoding="utf-8")
    r = run_cli("mco", "goal", "demo", "--goals", "goals.json", cwd=workdir)
    assert r.returncode == 0, r.stderr
    assert "total slack" in r.stdout
    csvs = list((built_case / "reports").glob("goal-*-dvh.csv"))
    assert csvs and csvs[0].read_text().startswith("structure,dose_gy,volume_fraction")


def test_priority_command(workdir, built_case):
    pri = workdir / "priorities.json"
    pri.write_text(json.dumps({"levels": [
        {"objective": "tumor_dev", "slip": 1.0, "slip_mode": "absolute"},
        {"objective": "cord_sq", "slip": 0.05, "slip_mode": "relative"},
    ]}), encoding="utf-8")
    r = run_cli("mco", "priority", "demo", "--priorities", "priorities.json",
                cwd=workdir)
    assert r.returncode == 0, r.stderr
    assert "stage tumor_dev" in r.stdout


def test_navigate_export_then_sparsify(workdir, built_case):
    r = run_cli("navigate", "demo", "--export", "exported.json", cwd=workdir)
    assert r.returncode == 0, r.stderr
    plan_id = r.stdout.split()[1]
    r = run_cli("sparsify", "demo", "--plan", plan_id, "--beams", "12",
                "--epsilon", "0.25", cwd=workdir)
    assert r.returncode == 0, r.stderr
    assert "achieved=" in r.stdout
    reports = list((built_case / "reports").glob("sparsify-*.json"))
    assert reports
    body = json.loads(reports[0].read_text())
    assert "steps" in body and "search_space_note" in body
