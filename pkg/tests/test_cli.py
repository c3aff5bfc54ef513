import json
import subprocess
import sys

import pytest

from pafit.cli import main


def _run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), "--run-name", "r", "--quiet"])


def _report(tmp_path):
    return json.loads((tmp_path / "r" / "report.json").read_text())


def test_phase_beta(tmp_path):
    assert _run(tmp_path, "phase", "--model", "beta", "--alpha", "1", "--beta", "3") == 0
    rep = _report(tmp_path)
    assert rep["phase"] == "innovation-pays-off"
    assert rep["lambda0"] == 1.0
    assert rep["missing_mass"] == pytest.approx(0.5, abs=1e-9)
    assert (tmp_path / "r" / "config.json").exists()


def test_phase_dirac(tmp_path):
    assert _run(tmp_path, "phase", "--model", "dirac", "--f", "1") == 0
    rep = _report(tmp_path)
    assert rep["lambda0"] == pytest.approx(2.0) and rep["tail_exponent"] == 2.0


def test_phase_zeta(tmp_path):
    assert _run(tmp_path, "phase", "--model", "zeta", "--theta", "2") == 0
    assert _report(tmp_path)["I_at_h"] == pytest.approx(0.1106, abs=1e-4)


def test_simulate_outputs_and_determinism(tmp_path):
    argv = ["simulate", "--model", "twopoint", "--n", "5000", "--seeds", "2", "--track-first", "3"]
    assert _run(tmp_path, *argv) == 0
    d = tmp_path / "r"
    files = sorted(p.name for p in d.iterdir())
    for s in (0, 1):
        assert f"summary_seed{s}.json" in files and f"trajectories_seed{s}.csv" in files
    first = {p.name: p.read_bytes() for p in d.iterdir()}
    assert _run(tmp_path, *argv) == 0
    assert first == {p.name: p.read_bytes() for p in d.iterdir()}


def test_simulate_dirac_degree_share(tmp_path):
    assert _run(tmp_path, "simulate", "--model", "dirac", "--f", "1", "--n", "100000",
                "--seeds", "3") == 0
    for r in _report(tmp_path)["runs"]:
        assert r["degree1_share"] == pytest.approx(2 / 3, abs=0.01)
        assert r["accounting"] == "ok"


def test_verify_exit_codes(tmp_path):
    base = ["verify", "--model", "twopoint", "--n", "20000", "--seeds", "2"]
    assert _run(tmp_path, *base, "--tolerance", "0.05") == 0
    assert _run(tmp_path, *base, "--tolerance", "1e-6") == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, "verify", "--model", "twopoint", "--summaries", str(bad)) == 2


def test_verify_from_summary_files(tmp_path):
    assert main(["simulate", "--model", "twopoint", "--n", "20000", "--out", str(tmp_path),
                 "--run-name", "sim", "--quiet"]) == 0
    path = tmp_path / "sim" / "summary_seed0.json"
    assert _run(tmp_path, "verify", "--model", "twopoint", "--summaries", str(path),
                "--tolerance", "0.05") == 0
    data = json.loads(path.read_text())
    data["snapshots"][-1]["M"]["1"] += 3
    path.write_text(json.dumps(data))
    assert _run(tmp_path, "verify", "--model", "twopoint", "--summaries", str(path)) == 2


def test_urn_joint_perron(tmp_path):
    assert _run(tmp_path, "urn", "--builder", "joint", "--model", "twopoint", "--k", "6",
                "--perron") == 0
    assert _report(tmp_path)["perron"]["lambda1"] == pytest.approx(3.2807764, abs=1e-6)


def test_urn_simulation(tmp_path):
    assert _run(tmp_path, "urn", "--builder", "degree", "--k", "3", "--n", "1000") == 0
    assert (tmp_path / "r" / "trajectory_seed0.csv").exists()


def test_couple_modes(tmp_path):
    assert _run(tmp_path, "couple", "--model", "zeta", "--theta", "2", "--I", "5", "--n", "2000",
                "--seeds", "2") == 0
    assert (tmp_path / "r" / "violations.jsonl").read_text() == ""
    assert _run(tmp_path, "couple", "--model", "zeta", "--theta", "2", "--I", "5", "--n", "3000",
                "--mode", "inversion") == 2
    assert (tmp_path / "r" / "violations.jsonl").read_text()


def test_scan_uniform(tmp_path):
    assert _run(tmp_path, "scan", "--model", "uniform", "--I", "10,50,250") == 0
    rows = _report(tmp_path)["rows"]
    assert abs(rows[-1]["lambda_tilde"] - 1.2550) < 0.004 + 0.05
    assert (tmp_path / "r" / "scan.csv").read_text().startswith("I,eps,lambda_tilde")


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nname = beta\nalpha = 1\nbeta = 3\n\n[run]\nk-max = 4\n")
    assert _run(tmp_path, "phase", "--config", str(cfg)) == 0
    assert _report(tmp_path)["phase"] == "innovation-pays-off"
    assert _run(tmp_path, "phase", "--config", str(cfg), "--beta", "2") == 0
    assert _report(tmp_path)["phase"] == "fit-get-richer-boundary"


def test_config_unknown_keys(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nname = beta\ncolour = 3\n")
    assert _run(tmp_path, "phase", "--config", str(cfg)) == 2
    cfg.write_text("[model]\nname = dirac\n[run]\nspeed = 3\n")
    assert _run(tmp_path, "phase", "--config", str(cfg)) == 2
    cfg.write_text("[extra]\nx = 1\n")
    assert _run(tmp_path, "phase", "--config", str(cfg)) == 2


def test_bad_model_inputs(tmp_path):
    assert _run(tmp_path, "phase", "--model", "dirac", "--theta", "2") == 2
    assert _run(tmp_path, "phase", "--model", "nope") == 2
    assert _run(tmp_path, "phase") == 2
    assert _run(tmp_path, "simulate", "--model", "dirac") == 2


def test_run_dir_named_by_config(tmp_path):
    assert main(["phase", "--model", "dirac", "--out", str(tmp_path), "--quiet"]) == 0
    (d,) = list(tmp_path.iterdir())
    assert d.name.startswith("phase-dirac-")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pafit", "phase", "--model", "dirac",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["phase"] == "first-mover-advantage"
