import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from parabolic_ssc.cli import CONFIG_SCHEMA, EXIT_COUNTEREXAMPLE, EXIT_ERROR, EXIT_OK, main, run
from parabolic_ssc.grid import SpaceTimeGrid, read_field_csv, write_field_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return path


def _summary(out):
    return (out / "summary.txt").read_text()


def test_solve_convex_config(tmp_path):
    out = tmp_path / "out"
    assert run(CONFIGS / "solve_convex.json", out) == EXIT_OK
    text = _summary(out)
    assert "final J:" in text
    res = float(text.split("final residual: ")[1].split()[0])
    assert res <= 1e-8
    assert (out / "trace.csv").read_text().startswith("iter,J,residual,step")


def test_verify_foc_config(tmp_path):
    out = tmp_path / "out"
    assert run(CONFIGS / "foc_sparse.json", out, dump_fields=True) == EXIT_OK
    assert "classification violations: 0" in _summary(out)
    g = SpaceTimeGrid(1, 31, 32)
    labels = read_field_csv(out / "labels.csv", g)
    assert set(np.unique(labels.values)) <= set(range(6))


def test_verify_soc_indefinite_config(tmp_path):
    out = tmp_path / "out"
    assert run(CONFIGS / "soc_indefinite.json", out) == EXIT_COUNTEREXAMPLE
    saved = sorted(out.glob("violating_direction_*.csv"))
    assert saved
    v = read_field_csv(saved[0], SpaceTimeGrid(1, 31, 32))
    assert np.any(v.values != 0)
    assert "FAIL" in _summary(out)


def test_manufactured_block_and_expression_fields(tmp_path):
    cfg = json.loads((CONFIGS / "soc_manufactured.json").read_text())
    cfg["samples"] = 20
    cfg["tau"] = 0.01
    out = tmp_path / "out"
    assert run(_write(tmp_path, cfg), out) == EXIT_OK
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "id,tau,margin_sign,margin_structure,margin_dJ,ratio" and len(rows) == 21


def test_problem_fields_from_csv_and_lists(tmp_path):
    g = SpaceTimeGrid(1, 5, 4)
    write_field_csv(tmp_path / "yd.csv", g.evaluate(lambda x, t: np.sin(np.pi * x[:, 0]) * t))
    cfg = {
        "mode": "solve",
        "problem": {
            "grid": {"d": 1, "n_x": 5, "n_t": 4},
            "nonlinearity": {"kind": "odd_polynomial", "coefficients": [0.0, 0.0, 1.0]},
            "alpha": -1, "beta": 1, "mu": 0.01, "nu_omega": 1,
            "y_d": {"csv": "yd.csv"},
            "y_omega": [0.1, 0.2, 0.3, 0.2, 0.1],
            "y0": "0.1 * sin(pi * x0)",
        },
    }
    out = tmp_path / "out"
    assert run(_write(tmp_path, cfg), out, dump_fields=True) == EXIT_OK
    assert (out / "u.csv").exists() and (out / "phi.csv").exists()


@pytest.mark.parametrize("mode,name", [("growth", "growth_sparse"), ("cones", "cones_sparse"), ("bounds", "bounds_cubic")])
def test_sampling_reports_ignore_worker_count(tmp_path, mode, name):
    cfg = json.loads((CONFIGS / f"{name}.json").read_text())
    cfg["samples"] = 40
    path = _write(tmp_path, cfg)
    assert run(path, tmp_path / "w1", workers=1) == EXIT_OK
    assert run(path, tmp_path / "w3", workers=3) == EXIT_OK
    assert (tmp_path / "w1" / "report.csv").read_bytes() == (tmp_path / "w3" / "report.csv").read_bytes()


def test_malformed_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "mode": "solve",\n  "seed": ,\n}')
    assert run(path, tmp_path / "out") == EXIT_ERROR
    err = capsys.readouterr().err
    assert "line 3" in err


def test_schema_violation_names_field(tmp_path, capsys):
    cfg = {"mode": "solve", "instance": {"name": "sparse_cubic"}, "samples": 0}
    assert run(_write(tmp_path, cfg), tmp_path / "out") == EXIT_ERROR
    assert "field samples" in capsys.readouterr().err


def test_unknown_mode_and_bad_expression(tmp_path, capsys):
    assert run(_write(tmp_path, {"mode": "explode", "instance": {"name": "sparse_cubic"}}), tmp_path / "o1") == EXIT_ERROR
    assert "field mode" in capsys.readouterr().err
    cfg = json.loads((CONFIGS / "solve_convex.json").read_text())
    cfg["problem"]["y_d"] = "__import__('os').getcwd()"
    assert run(_write(tmp_path, cfg), tmp_path / "o2") == EXIT_ERROR
    assert "problem.y_d" in capsys.readouterr().err


def test_invalid_problem_is_an_error(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "solve_convex.json").read_text())
    cfg["problem"]["operator"] = {"a": [[-1.0]]}
    assert run(_write(tmp_path, cfg), tmp_path / "out") == EXIT_ERROR
    assert "ellipticity" in capsys.readouterr().err


def test_every_shipped_config_validates():
    import jsonschema

    for path in CONFIGS.glob("*.json"):
        jsonschema.validate(json.loads(path.read_text()), CONFIG_SCHEMA)


def test_module_entry_point(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "parabolic_ssc", "--config", str(CONFIGS / "foc_sparse.json"), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_OK, proc.stderr
    assert "verdict: PASS" in proc.stdout


def test_main_rejects_bad_worker_count(tmp_path):
    with pytest.raises(SystemExit):
        main(["--config", str(CONFIGS / "foc_sparse.json"), "--workers", "0"])
