import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mlpic.cli import (
    build_problem,
    config_hash,
    load_config,
    main,
    run_estimate,
    run_mse_cost,
    run_sivr_demo,
    serialize_config,
    validate_config,
)
from mlpic.errors import ConfigError


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


BASE_LQG = {
    "seed": 21,
    "problem": {"name": "lqg", "params": {"A": -1.0, "B": 1.0, "F": 1.0, "Q": 1.0,
                                          "R_cost": 0.1, "x0": -0.1, "T": 1.0}},
    "method": "mlmc",
    "n_particles": 32,
    "M": 4,
    "epsilon": 0.25,
    "repetitions": 2,
    "schedule": {"c_bias": 4.0, "c_var": 2.0},
}


class TestConfig:
    def test_round_trip_identity(self, tmp_path):
        cfg = dict(BASE_LQG, out="x.csv")
        path = write_cfg(tmp_path, "c.yaml", cfg)
        loaded = load_config(path)
        assert loaded == yaml.safe_load(serialize_config(loaded))

    def test_unknown_fields_rejected(self):
        with pytest.raises(ConfigError) as err:
            validate_config(dict(BASE_LQG, bogus=1), "estimate")
        assert "bogus" in str(err.value)

    def test_missing_seed_rejected(self):
        cfg = {k: v for k, v in BASE_LQG.items() if k != "seed"}
        with pytest.raises(ConfigError) as err:
            validate_config(cfg, "estimate")
        assert "seed" in str(err.value)

    def test_mode_conflict_rejected(self):
        with pytest.raises(ConfigError):
            validate_config(dict(BASE_LQG, mode="mse-cost"), "estimate")

    def test_bad_problem_params_rejected(self):
        cfg = dict(BASE_LQG, problem={"name": "lqg", "params": {"nope": 1}})
        with pytest.raises(ConfigError) as err:
            build_problem(cfg)
        assert "nope" in str(err.value)

    def test_hash_ignores_output_location(self):
        assert config_hash(dict(BASE_LQG, out="a.csv")) == config_hash(dict(BASE_LQG, out="b.csv"))
        assert config_hash(BASE_LQG) != config_hash(dict(BASE_LQG, seed=22))


class TestEstimateMode:
    def test_rows_and_determinism(self):
        rows1 = run_estimate(dict(BASE_LQG))
        rows2 = run_estimate(dict(BASE_LQG))
        assert len(rows1) == 2
        for a, b in zip(rows1, rows2):
            for key in a:
                if key != "wall_time_s":
                    assert a[key] == b[key]
        assert all(np.isfinite(r["u"]) for r in rows1)
        assert all(r["cost_steps"] > 0 for r in rows1)

    def test_method_override(self):
        cfg = dict(BASE_LQG, level=5, iterations=50, repetitions=1)
        rows = run_estimate(cfg, method="pimh")
        assert rows[0]["method"] == "pimh"
        assert rows[0]["level_max"] == 5

    def test_row_error_recorded_not_fatal(self):
        cfg = dict(BASE_LQG, method="pimh", level=3, iterations=20, repetitions=2)
        rows = run_estimate(cfg)  # level 3 < M=4 -> per-row error
        assert len(rows) == 2
        assert all(r["error"] != "" for r in rows)

    def test_byte_identical_files(self, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        cfg_path = write_cfg(tmp_path, "c.yaml", dict(BASE_LQG, out=str(out1)))
        assert main(["estimate", "--config", cfg_path]) == 0
        assert main(["estimate", "--config", cfg_path, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        header = out1.read_text().splitlines()[0]
        assert header.startswith("record,mode,method,problem")
        assert "wall_time_s" not in header

    def test_timings_flag_adds_column(self, tmp_path):
        out = tmp_path / "t.csv"
        cfg_path = write_cfg(tmp_path, "c.yaml", dict(BASE_LQG, repetitions=1, out=str(out)))
        assert main(["estimate", "--config", cfg_path, "--timings"]) == 0
        assert "wall_time_s" in out.read_text().splitlines()[0]

    def test_jsonl_mirror(self, tmp_path):
        out = tmp_path / "r.jsonl"
        cfg_path = write_cfg(tmp_path, "c.yaml", dict(BASE_LQG, repetitions=1, out=str(out)))
        assert main(["estimate", "--config", cfg_path, "--format", "jsonl"]) == 0
        rec = json.loads(out.read_text().splitlines()[0])
        assert rec["record"] == "estimate"
        assert rec["method"] == "mlmc"

    def test_exit_codes(self, tmp_path):
        bad = write_cfg(tmp_path, "bad.yaml", {"problem": {"name": "lqg"}})
        assert main(["estimate", "--config", bad, "--out", str(tmp_path / "x.csv")]) == 2
        failing = write_cfg(tmp_path, "fail.yaml",
                            dict(BASE_LQG, method="pimh", level=3, iterations=10,
                                 repetitions=1, out=str(tmp_path / "f.csv")))
        assert main(["estimate", "--config", failing]) == 3

    def test_env_seed_override(self, tmp_path, monkeypatch):
        out = tmp_path / "e.csv"
        cfg_path = write_cfg(tmp_path, "c.yaml", dict(BASE_LQG, repetitions=1, out=str(out)))
        monkeypatch.setenv("MLPIC_SEED", "99")
        assert main(["estimate", "--config", cfg_path]) == 0
        assert ",99," in out.read_text().splitlines()[1]

    def test_console_entrypoint(self, tmp_path):
        out = tmp_path / "cli.csv"
        cfg_path = write_cfg(tmp_path, "c.yaml",
                             dict(BASE_LQG, repetitions=1, out=str(out)))
        proc = subprocess.run(
            [sys.executable, "-m", "mlpic.cli", "estimate", "--config", cfg_path],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()


class TestMseCostMode:
    def test_row_shape_and_summaries(self):
        cfg = {
            "seed": 5,
            "problem": {"name": "lqg"},
            "n_particles": 24,
            "M": 4,
            "schedule": {"c_bias": 4.0, "c_var": 1.0, "c_single": 0.5},
            "mse_cost": {
                "epsilon_grid": [0.25, 0.125],
                "methods": ["pimh", "mlmc"],
                "repetitions": 2,
                "ground_truth": {"budget_factor": 2.0},
            },
        }
        rows = run_mse_cost(cfg)
        estimates = [r for r in rows if r["record"] == "estimate"]
        points = [r for r in rows if r["record"] == "mse_point"]
        slopes = [r for r in rows if r["record"] == "mse_slope"]
        gts = [r for r in rows if r["record"] == "ground_truth"]
        assert len(estimates) == 2 * 2 * 2
        assert len(points) == 4
        assert len(slopes) == 2
        assert len(gts) == 1
        for r in points:
            assert r["mse"] >= 0 and r["mean_cost"] > 0

    def test_threads_do_not_change_rows(self):
        cfg = {
            "seed": 6,
            "problem": {"name": "lqg"},
            "n_particles": 16,
            "M": 3,
            "schedule": {"c_bias": 4.0, "c_var": 1.0, "c_single": 0.5},
            "mse_cost": {"epsilon_grid": [0.25, 0.125], "methods": ["mlmc"],
                         "repetitions": 2, "ground_truth": {"iterations": 50}},
        }
        rows1 = run_mse_cost(dict(cfg), threads=1)
        rows2 = run_mse_cost(dict(cfg), threads=2)
        assert len(rows1) == len(rows2)
        for a, b in zip(rows1, rows2):
            for key in a:
                if key != "wall_time_s":
                    assert a[key] == b[key], key


class TestSivrDemoMode:
    CFG = {
        "seed": 9,
        "problem": {"name": "sivr"},
        "sivr_demo": {"segments": 4, "substeps": 4, "level": 4, "M": 3,
                      "n_particles": 24, "iterations": 40, "burn_in": 5},
    }

    def test_rows_on_simplex(self):
        rows, any_error = run_sivr_demo(dict(self.CFG))
        assert not any_error
        assert len(rows) == 4 * 4 + 1
        for r in rows:
            total = r["S"] + r["I"] + r["V"] + r["R"]
            assert abs(total - 1.0) < 1e-10

    def test_control_off_reduces_to_uncontrolled(self):
        cfg = dict(self.CFG)
        cfg["sivr_demo"] = dict(cfg["sivr_demo"], control=False)
        rows, _ = run_sivr_demo(cfg)
        assert all(r["u"] == 0.0 for r in rows[:-1])
        # replay the uncontrolled dynamics from the same keyed streams
        from mlpic.rng import Streams
        from mlpic.simulate import controlled_euler_step
        from mlpic import build_sivr, SivrParams

        problem = build_sivr(SivrParams())
        streams = Streams(9, "sivr-demo")
        state = problem.x0.copy()
        h = problem.horizon / 16
        k = 0
        for j in range(4):
            rng = streams.child("simulate", j)
            for _ in range(4):
                assert rows[k]["S"] == state[0] and rows[k]["I"] == state[1]
                w = rng.standard_normal(1) * np.sqrt(h)
                state = controlled_euler_step(problem, state, 0.0, w, h)
                k += 1

    def test_demo_requires_sivr(self, tmp_path):
        cfg = dict(self.CFG, problem={"name": "lqg"})
        with pytest.raises(ConfigError):
            run_sivr_demo(cfg)


class TestValidateMode:
    def test_green_path_and_negative_controls(self, tmp_path):
        # run through main at reduced size to keep this quick
        cfg = {
            "seed": 2,
            "problem": {"name": "lqg"},
            "validate": {"problems": ["lqg"], "paths": 120, "probes": 120},
        }
        path = write_cfg(tmp_path, "v.yaml", cfg)
        assert main(["validate", "--config", path, "--out", str(tmp_path / "v.json")]) == 0
        report = json.loads((tmp_path / "v.json").read_text())
        assert report["passed"] is True

        bad = dict(cfg)
        bad["validate"] = dict(cfg["validate"],
                               problems=["sivr"],
                               params={"sivr": {"sigma_varrho": 58.0}})
        bad_path = write_cfg(tmp_path, "vb.yaml", bad)
        assert main(["validate", "--config", bad_path, "--out", str(tmp_path / "vb.json")]) == 1
        report = json.loads((tmp_path / "vb.json").read_text())
        failing = [c["name"] for c in report["checks"] if not c["passed"]]
        assert "assumption2[sivr]" in failing

    def test_tamper_hook_fails_coupling_check(self):
        from mlpic.validate import run_checks

        report, ok = run_checks({"problems": ["lqg"], "paths": 60, "probes": 60},
                                seed=3, _tamper={"coupling": True})
        assert not ok
        failing = [c["name"] for c in report["checks"] if not c["passed"]]
        assert failing == ["coupling_exactness[lqg]"]
