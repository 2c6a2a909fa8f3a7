import json

import numpy as np
import pytest

from conflap.cli import main
from conflap.reports import strip_timestamp


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = """
[manifold]
generator = product
n_circle = 32
n_factor = 16
[verify]
trials = 8
key_samples = 4
fd_pairs = 1
"""


def test_spectrum_product(tmp_path, capsys):
    cfg = _write(tmp_path, "p.ini", SMALL)
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    r = json.loads((tmp_path / "o" / "spectrum.json").read_text())
    lam = [e["value"] for e in r["eigenvalues"]]
    assert lam[0] == pytest.approx(-2.0, abs=1e-10)
    assert lam[1] == pytest.approx(-1.0, abs=1e-2) and lam[2] == pytest.approx(lam[1], rel=1e-10)
    assert r["nu"]["value"] == 3 and r["nu"]["pass"]
    assert r["cluster2"]["indices"] == [1, 2]
    assert all(set(e) == {"value", "tol", "pass"} for e in r["eigenvalues"])


def test_spectrum_degenerate_warning(tmp_path, capsys):
    cfg = _write(tmp_path, "c.ini", "[manifold]\ngenerator = circle\nnodes = 32\npotential = 1.0\n")
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    err = capsys.readouterr().err
    assert "maximization problem degenerate" in err
    r = json.loads((tmp_path / "o" / "spectrum.json").read_text())
    assert r["nu"]["value"] == 0


def test_spectrum_kernel_warning(tmp_path, capsys):
    cfg = _write(tmp_path, "c.ini", "[manifold]\ngenerator = circle\nnodes = 32\npotential = 0.0\n")
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "kernel warning" in capsys.readouterr().err


def test_config_error_exit(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.ini", "[solver]\nclustr_tol = 1\n")
    assert main(["spectrum", "--config", str(cfg)]) == 2
    assert "bad.ini:2" in capsys.readouterr().err


def test_solver_error_exit(tmp_path):
    cfg = _write(tmp_path, "s.ini", SMALL + "[solver]\nmethod = sparse\nsolver_tol = 1e-30\n")
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_optimize_nodal(tmp_path):
    cfg = _write(tmp_path, "n.ini", "[manifold]\ngenerator = nodal\nnodes = 128\n")
    out = tmp_path / "o"
    assert main(["optimize", "--config", str(cfg), "--out", str(out)]) == 0
    r = json.loads((out / "optimize.json").read_text())
    assert r["classification"] == "Nodal" and r["k"]["value"] == 1
    assert r["checks"]["identity_error"]["pass"] and r["checks"]["nodal_residual"]["pass"]
    assert (out / "diagnostics.csv").exists() and (out / "per_epsilon.csv").exists()
    assert len(list((out / "checkpoints").glob("*.json"))) == 5
    assert np.loadtxt(out / "u_final.txt").shape == (128,)
    assert main(["report", "--config", str(cfg), "--out", str(out)]) == 0


def test_optimize_single_huge_eps(tmp_path):
    cfg = _write(tmp_path, "h.ini", "[manifold]\ngenerator = nodal\nnodes = 128\n"
                                    "[optimizer]\nschedule = 5.0\n")
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_optimize_degenerate_exit(tmp_path):
    cfg = _write(tmp_path, "d.ini", "[manifold]\ngenerator = circle\nnodes = 32\npotential = -0.5\n")
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_report_without_inputs(tmp_path):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2


def test_verify_deterministic_and_tamper(tmp_path, capsys):
    cfg = _write(tmp_path, "v.ini", SMALL)
    codes, reports = [], []
    for name in ("a", "b"):
        codes.append(main(["verify", "--config", str(cfg), "--out", str(tmp_path / name),
                           "--seed", "0"]))
        reports.append(strip_timestamp(json.loads((tmp_path / name / "verify.json").read_text())))
    assert codes[0] == codes[1]
    assert reports[0] == reports[1]
    sections = reports[0]["sections"]
    assert set(sections) == {"fd_derivative", "maximality", "key_inequality", "theta_sweep"}
    assert sections["maximality"]["max_excess"]["pass"] and not sections["maximality"]["violations"]
    tampered = _write(tmp_path, "t.ini", SMALL.replace("[verify]", "[verify]\nnear_cv_tol = 1e-12"))
    capsys.readouterr()
    assert main(["verify", "--config", str(tampered), "--out", str(tmp_path / "t")]) == 5
    assert "maximality" in capsys.readouterr().err
