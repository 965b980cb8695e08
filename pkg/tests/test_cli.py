import json
import os

import numpy as np
import pytest

from sigppde.cli import main
from sigppde.paths import Path, TimeGrid
from sigppde.sig_oracle import truncated_kernel


@pytest.fixture
def tiny_config(tmp_path):
    cfg = {
        "kind": "fbm",
        "payoff": "identity",
        "hurst": 0.1,
        "m": 12,
        "n": 8,
        "n_steps": 16,
        "eval_count": 6,
        "seed": 11,
        "dyadic_order": 1,
        "sigma_g": 1.5,
        "sigma_t": 0.5,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def strip_runtime(metrics_file):
    obj = json.loads(metrics_file.read_text())
    obj.pop("runtime_ms", None)
    return json.dumps(obj, sort_keys=True)


class TestKernelEval:
    def test_linear_paths_match_oracle(self, tmp_path, capsys):
        grid = TimeGrid(0.0, 1.0, 32)
        lin = Path(grid=grid, values=grid.nodes[:, None])
        g = tmp_path / "gamma.csv"
        g.write_text(lin.to_csv())
        t = tmp_path / "tau.csv"
        t.write_text(lin.to_csv())
        code = main(
            ["kernel-eval", "--gamma", str(g), "--tau", str(t), "--eta", str(g),
             "--dyadic-order", "3"]
        )
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["kernel"] == pytest.approx(truncated_kernel(lin, lin, 14), abs=1e-4)
        assert out["d_eta"] == pytest.approx(1.5906368546373291, abs=1e-3)
        assert out["d_etabar"] == 0.0

    def test_bad_csv_is_invalid_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,path\n")
        code = main(["kernel-eval", "--gamma", str(bad), "--tau", str(bad)])
        assert code == 2


class TestSolveFbm:
    def test_writes_report_files(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run1"
        code = main(
            ["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out),
             "--emit-plot-data"]
        )
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert set(metrics) >= {"mse", "mae", "config", "n_points", "runtime_ms"}
        lines = (out / "points.csv").read_text().splitlines()
        assert len(lines) == 1 + metrics["n_points"]
        assert (out / "plot_data.csv").read_text().startswith("oracle,predicted")
        stdout = json.loads(capsys.readouterr().out)
        assert stdout["mse"] == metrics["mse"]

    def test_bitwise_deterministic_outputs(self, tiny_config, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out1)]) == 0
        assert main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out2)]) == 0
        assert (out1 / "points.csv").read_bytes() == (out2 / "points.csv").read_bytes()
        # metrics agree bitwise once the timing field is removed
        assert strip_runtime(out1 / "metrics.json") == strip_runtime(out2 / "metrics.json")

    def test_seed_override_changes_results(self, tiny_config, tmp_path, capsys):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out1)])
        main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out2), "--seed", "99"])
        assert (out1 / "points.csv").read_bytes() != (out2 / "points.csv").read_bytes()

    def test_threads_env_fallback(self, tiny_config, tmp_path, capsys, monkeypatch):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out1)])
        monkeypatch.setenv("SIGPPDE_THREADS", "2")
        main(["solve-fbm", "--config", str(tiny_config), "--out-dir", str(out2)])
        assert (out1 / "points.csv").read_bytes() == (out2 / "points.csv").read_bytes()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"kind": "nope"}))
        assert main(["solve-fbm", "--config", str(bad)]) == 2
        missing = tmp_path / "missing.json"
        assert main(["solve-fbm", "--config", str(missing)]) == 2
        unknown = tmp_path / "unknown.json"
        unknown.write_text(json.dumps({"kind": "fbm", "bogus_key": 1}))
        assert main(["solve-fbm", "--config", str(unknown)]) == 2


class TestCrossValidateCommand:
    def test_prints_chosen_bandwidths(self, tmp_path, capsys):
        cfg = {
            "kind": "fbm",
            "payoff": "identity",
            "hurst": 0.1,
            "m": 10,
            "n": 6,
            "n_steps": 16,
            "eval_count": 4,
            "seed": 2,
            "dyadic_order": 1,
            "cv_grid": [{"sigma_t": 0.5}, {"sigma_t": 0.8}],
        }
        path = tmp_path / "cv.json"
        path.write_text(json.dumps(cfg))
        assert main(["cross-validate", "--config", str(path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["sigma_t"] in (0.5, 0.8)


class TestOracleCheck:
    def test_passes(self, capsys):
        assert main(["oracle-check", "--pairs", "4", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "4/4 pairs within tolerance" in out


class TestBergomiCommand:
    def test_small_run(self, tmp_path, capsys):
        cfg = {
            "kind": "bergomi",
            "payoff": "call",
            "hurst": 0.1,
            "strike": 1.0,
            "m": 10,
            "n": 6,
            "n_steps": 16,
            "eval_count": 3,
            "mc_paths": 1000,
            "seed": 4,
            "dyadic_order": 1,
        }
        path = tmp_path / "b.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "out"
        assert main(["solve-bergomi", "--config", str(path), "--out-dir", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert np.isfinite(metrics["mse"])
