import csv
import json

import pytest

from _models import CONFIGS
from mmstrat.cli import main


def cfg(name):
    return str(CONFIGS / f"{name}.toml")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", cfg("good"), "--out", str(tmp_path / "a")]) == 0
    assert main(["validate", "--config", cfg("bad-eta"), "--out", str(tmp_path / "b")]) == 2
    assert "FAIL  B' (b4')" in capsys.readouterr().out
    failed = [r for r in rows(tmp_path / "b" / "validation.csv") if r["passed"] == "false"]
    assert [r["assumption"] for r in failed] == ["B' (b4')"]


def test_usage_errors_exit_64(tmp_path, capsys):
    assert main(["nonsense"]) == 64
    assert main([]) == 64
    assert main(["simulate", "--config", cfg("default"), "--paths", "10", "--out", str(tmp_path)]) == 64
    assert "seed" in capsys.readouterr().err


def test_missing_config_is_invalid(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 2


def test_manifest_and_full_precision_csv(tmp_path):
    out = tmp_path / "sim"
    argv = ["simulate", "--config", cfg("default"), "--seed", "3", "--paths", "500", "--out", str(out),
            "--per-path", "--event-log", "2"]
    assert main(argv) == 0
    man = json.loads((out / "run_manifest.json").read_text())
    for key in ("config_hash", "config", "seed", "paths", "grid_steps", "workers", "kernel_backend", "version",
                "argv", "outputs", "summary", "wall_seconds"):
        assert key in man
    assert man["seed"] == 3 and man["paths"] == 500 and man["argv"] == argv
    assert set(man["outputs"]) == {"cost.csv", "paths.csv", "events.csv"}
    cost = rows(out / "cost.csv")
    mean = [r for r in cost if r.get("form", "J") == "J"][0]["mean"]
    assert len(mean.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) >= 15
    assert len(rows(out / "paths.csv")) == 500


def test_default_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MMSTRAT_OUT", str(tmp_path))
    assert main(["solve-v2", "--config", cfg("default"), "--grid-steps", "50"]) == 0
    (run,) = tmp_path.iterdir()
    assert run.name.startswith("solve-v2-")
    assert len(rows(run / "v2.csv")) == 51
    assert json.loads((run / "run_manifest.json").read_text())["grid_steps"] == 50


@pytest.mark.parametrize("method", ["propagator", "ode", "kernel"])
def test_solve_affine_methods(tmp_path, method):
    assert main(["solve-affine", "--config", cfg("default"), "--method", method, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "affine.csv").exists()


def test_expand_and_oracle(tmp_path):
    assert main(["expand", "--config", cfg("factor"), "--epsilon", "0.1", "--out", str(tmp_path / "e"),
                 "--convergence", "0.2", "0.1", "--nodes", "201", "--pde-steps", "400"]) == 0
    conv = rows(tmp_path / "e" / "convergence.csv")
    assert [float(r["epsilon"]) for r in conv] == [0.2, 0.1]
    assert all(float(r["error_order2"]) < float(r["error_order0"]) for r in conv)
    assert main(["oracle", "--config", cfg("factor"), "--epsilon", "0.1", "--nodes", "201", "--pde-steps", "400",
                 "--save-every", "100", "--out", str(tmp_path / "o")]) == 0
    grid = rows(tmp_path / "o" / "oracle.csv")
    assert len(grid) == 5 * 201 and {float(r["t"]) for r in grid} == {0.0, 0.25, 0.5, 0.75, 1.0}
    (summary,) = rows(tmp_path / "o" / "oracle_summary.csv")
    assert float(summary["value"]) > 0


def test_martingale_experiment(tmp_path):
    assert main(["experiment", "martingale", "--config", cfg("default"), "--seed", "1", "--paths", "2000",
                 "--out", str(tmp_path)]) == 0
    assert len(rows(tmp_path / "martingale.csv")) == 2 * (5 + 1)
