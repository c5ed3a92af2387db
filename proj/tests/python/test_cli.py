import csv
import hashlib
import json
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

import didsnmm

CLI = os.environ.get("DIDSNMM_CLI", "didsnmm")


def run(*args, check=True):
    p = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and p.returncode != 0:
        raise AssertionError(f"{args} exited {p.returncode}: {p.stderr}")
    return p


def digest(folder):
    out = {}
    for f in sorted(Path(folder).iterdir()):
        if f.name != "manifest.json":
            out[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def panel(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run("simulate", "--dgp", "coarse-staggered", "--n", 2000, "--seed", 5, "--out", root / "sim")
    return root


def test_simulate_matches_library(panel):
    text = (panel / "sim" / "panel.csv").read_text()
    assert text == didsnmm.simulate("coarse-staggered", 2000, seed=5).to_csv()


def test_fit_matches_library(panel):
    out = panel / "fit"
    run("fit", "--data", panel / "sim" / "panel.csv", "--dgp", "coarse-staggered", "--method", "closed-form",
        "--out", out)
    cfg = didsnmm.gallery("coarse-staggered")
    data = didsnmm.Panel.load_csv(str(panel / "sim" / "panel.csv"))
    direct = didsnmm.fit(data, cfg["analysis_model"], cfg["analysis_nuisance"], "closed-form", seed=1)
    got = json.loads((out / "fit.json").read_text())
    np.testing.assert_array_equal(np.array(got["psi_hat"]), direct.psi)
    with open(out / "observed_vs_never.csv") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        k = int(float(r["k"]))
        want = direct.query({"target": "observed_vs_never", "k": k})["estimate"]
        assert float(r["estimate"]) == pytest.approx(want, abs=1e-12)
    assert (out / "lag_average.csv").exists()


@pytest.mark.parametrize("sub,extra", [
    ("fit", ["--method", "crossfit"]),
    ("derive", ["--bootstrap", "100", "--method", "closed-form"]),
    ("sensitivity", ["--sensitivity", '{"grid": [-0.5, 0, 0.5]}']),
])
def test_manifest_reproduces_bitwise(panel, sub, extra):
    out = panel / f"rep-{sub}"
    run(sub, "--data", panel / "sim" / "panel.csv", "--dgp", "coarse-staggered", "--seed", 3, "--out", out, *extra)
    first = digest(out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == sub
    assert manifest["config"]["seed"] == 3
    run(sub, "--config", out / "manifest.json", "--threads", 2)
    assert digest(out) == first


def test_optimal_and_simulate_reproduce(tmp_path):
    run("simulate", "--dgp", "optimal-regime", "--n", 800, "--seed", 2, "--out", tmp_path / "s")
    run("simulate", "--config", tmp_path / "s" / "manifest.json", "--out", tmp_path / "s2")
    assert digest(tmp_path / "s") == digest(tmp_path / "s2")
    run("optimal", "--data", tmp_path / "s" / "panel.csv", "--dgp", "optimal-regime", "--out", tmp_path / "o")
    first = digest(tmp_path / "o")
    run("optimal", "--config", tmp_path / "o" / "manifest.json")
    assert digest(tmp_path / "o") == first
    regime = json.loads((tmp_path / "o" / "regime.json").read_text())
    assert "value" in regime and regime["decision_table"]


def test_exit_codes(panel, tmp_path):
    data = panel / "sim" / "panel.csv"
    assert run("fit", "--nope", check=False).returncode == 2
    p = run("fit", "--data", data, "--model", '{"flavor": "coarse", "basis": [{"type": "bogus"}]}',
            "--out", tmp_path / "a", check=False)
    assert p.returncode == 2 and "/model/basis/0/type" in p.stderr
    assert run("fit", "--data", tmp_path / "missing.csv", "--dgp", "coarse-staggered", "--out", tmp_path / "b",
               check=False).returncode == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,time,y,a_a\n1,0,1,0\n1,2,1,0\n")
    assert run("fit", "--data", bad, "--dgp", "coarse-staggered", "--out", tmp_path / "c",
               check=False).returncode == 3
    # nothing varies in A: the estimating equations are singular
    flat = tmp_path / "flat.csv"
    flat.write_text("subject_id,time,y,a_a,z_L\n" + "".join(
        f"{i},{t},{i * 0.1 + t},0,{(i % 3) * 0.5}\n" for i in range(1, 40) for t in range(4)))
    assert run("fit", "--data", flat, "--dgp", "coarse-staggered", "--method", "closed-form",
               "--out", tmp_path / "d", check=False).returncode == 4
