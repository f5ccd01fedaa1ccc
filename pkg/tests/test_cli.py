import json
import os

from keldysh_lab.cli import main
from keldysh_lab.linalg import matrix_to_json
import numpy as np


def run_cli(args, tmp_path, name="out"):
    out = str(tmp_path / name)
    code = main(args + ["--output", out, "--no-figures"])
    return code, out


def test_minimal_smoke_single_mode(tmp_path):
    cfg = {
        "model": {"preset": "single-mode", "params": {"q": 1.0, "b": 0.0}},
        "beta": 0.9, "T": 0.6,
        "interaction": {"type": "none"},
        "plan": {"seed": 3, "N_range": [1, 4]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(["covariance", "--config", str(path)], tmp_path)
    assert code == 0
    report = json.loads(open(os.path.join(out, "covariance.json")).read())
    assert report["seed"] == 3
    assert all(r["grid_deviation"] < 1e-10 for r in report["per_N"])
    assert os.path.exists(os.path.join(out, "covariance.csv"))
    blocks = open(os.path.join(out, "covariance_blocks.csv")).read().splitlines()
    assert blocks[1] == "bra,ket,t,tp,x,y,abs_C"
    assert len(blocks) == 2 + 4 * 9 * 9   # one site, 9x9 grid, four blocks


def test_verify_subcommand_all_pass(tmp_path):
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 2},
        "beta": 0.8, "T": 0.5,
        "interaction": {"type": "density-density", "pairs": [[0, 1]],
                        "coupling": 0.0},
        "plan": {"seed": 11, "trials": 200, "panels": 32, "fo_panels": 32,
                 "auto_coupling": True},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(["verify", "--config", str(path)], tmp_path)
    assert code == 0
    lines = open(os.path.join(out, "verify.csv")).read().strip().splitlines()
    assert lines[1] == "m,mbar,lhs,rhs,passed"
    body = [ln.split(",") for ln in lines[2:]]
    assert body and all(row[-1] == "pass" for row in body)


def test_malformed_config_names_field(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"beta": -1.0}))
    code = main(["covariance", "--config", str(path),
                 "--output", str(tmp_path / "o"), "--no-figures"])
    assert code == 2
    assert "beta" in capsys.readouterr().err


def test_unknown_top_level_field(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"betaa": 1.0}))
    code = main(["covariance", "--config", str(path),
                 "--output", str(tmp_path / "o"), "--no-figures"])
    assert code == 2
    assert "betaa" in capsys.readouterr().err


def test_inline_model_config(tmp_path):
    A = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    cfg = {
        "model": {"inline": {"epsilon": 1.0,
                             "A": matrix_to_json(A),
                             "B": matrix_to_json(np.zeros((2, 2))),
                             "Q": matrix_to_json(A + 2 * np.eye(2))}},
        "beta": 0.8, "T": 0.4,
        "interaction": {"type": "none"},
        "plan": {"seed": 5, "N_range": [2]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, _ = run_cli(["covariance", "--config", str(path)], tmp_path)
    assert code == 0


def test_report_policy_does_not_gate(tmp_path):
    # impossible threshold on a reported (non-asserted) check still exits 0
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 2},
        "beta": 0.8, "T": 0.5,
        "interaction": {"type": "density-density", "pairs": [[0, 1]],
                        "coupling": 100.0},
        "plan": {"seed": 2, "trials": 50, "panels": 16,
                 "auto_coupling": False, "fo_panels": 16,
                 "checks": {"cumulant-bound-condition": "report",
                            "cumulant-bound-holds": "report"}},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(["verify", "--config", str(path)], tmp_path)
    assert code == 0
    report = json.loads(open(os.path.join(out, "verify.json")).read())
    assert report["condition_ok"] is False
    assert report["verdict"].startswith("condition not satisfied")


def test_assert_policy_gates_exit(tmp_path):
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 2},
        "beta": 0.8, "T": 0.5,
        "interaction": {"type": "density-density", "pairs": [[0, 1]],
                        "coupling": 100.0},
        "plan": {"seed": 2, "trials": 50, "panels": 16, "fo_panels": 16,
                 "auto_coupling": False},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, _ = run_cli(["verify", "--config", str(path)], tmp_path)
    assert code == 1


def test_deterministic_reports(tmp_path):
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 2},
        "beta": 0.7, "T": 0.4,
        "interaction": {"type": "density-density", "pairs": [[0, 1]],
                        "coupling": 0.3},
        "plan": {"seed": 9, "trials": 60, "panels": 16, "cap": 4,
                 "trotter_N_range": [4, 8]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    blobs = []
    for name in ("r1", "r2"):
        code, out = run_cli(["cumulants", "--config", str(path)], tmp_path, name)
        assert code == 0
        blobs.append((open(os.path.join(out, "cumulants.json"), "rb").read(),
                      open(os.path.join(out, "cumulants.csv"), "rb").read()))
    assert blobs[0] == blobs[1]


def test_trotter_scan_cli(tmp_path):
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 3},
        "beta": 0.8, "T": 1.0,
        "interaction": {"type": "density-density", "coupling": 0.6},
        "plan": {"seed": 1, "trotter_N_range": [8, 16, 32]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(["trotter-scan", "--config", str(path)], tmp_path)
    assert code == 0
    report = json.loads(open(os.path.join(out, "trotter_scan.json")).read())
    assert -1.3 <= report["slope"] <= -0.7


def test_volume_scan_cli(tmp_path):
    cfg = {
        "model": {"preset": "dissipative-uniform", "size": 4},
        "beta": 0.8, "T": 1.0,
        "interaction": {"type": "none"},
        "plan": {"seed": 1, "sizes": [4, 6], "panels": 16},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out = run_cli(["volume-scan", "--config", str(path)], tmp_path)
    assert code == 0
    lines = open(os.path.join(out, "volume_scan.csv")).read().strip().splitlines()
    assert lines[1].startswith("L,alpha_numeric")
    assert len(lines) == 4


def test_figures_rendered(tmp_path):
    cfg = {
        "model": {"preset": "chain-hermitian", "size": 2},
        "beta": 0.8, "T": 0.5,
        "interaction": {"type": "none"},
        "plan": {"seed": 4, "N_range": [2]},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = str(tmp_path / "figs")
    code = main(["covariance", "--config", str(path), "--output", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "covariance.png"))
