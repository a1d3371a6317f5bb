import json

import numpy as np
import pytest

from trasenode.cli import main
from trasenode.network import load_checkpoint
from trasenode.solvers import uniform_grid
from trasenode.systems import OscillatorParams, gen_oscillator, ingest_csv, write_scenario


def write_train_config(path, scenario_paths, mode="node", epochs=2, **extra):
    doc = {
        "mode": mode,
        "network": {"hidden": [{"width": 8, "activation": "tanh"}]},
        "scenarios": [str(p) for p in scenario_paths],
        "epochs": epochs,
        "lr": 1e-3,
        "solver": {"method": "rk4", "step": 0.05},
        "seed": 0,
    }
    doc.update(extra)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture()
def scenario_files(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    paths = []
    for u in (1.0, 1.1):
        sc = gen_oscillator(OscillatorParams(), u=u, grid=uniform_grid(2.0, 12))
        csv_path, _ = write_scenario(sc, data / f"osc_u{u:g}.csv")
        paths.append(csv_path)
    return paths


class TestGenerate:
    def test_writes_files_and_manifest(self, tmp_path):
        out = tmp_path / "gen"
        rc = main(
            [
                "generate",
                "--system",
                "oscillator",
                "--u",
                "1",
                "--u",
                "2",
                "--points",
                "10",
                "--t-end",
                "2.0",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        assert (out / "oscillator_u1.csv").exists()
        assert (out / "oscillator_u2.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert len(manifest["outputs"]) == 4
        sc = ingest_csv(out / "oscillator_u1.csv")
        assert sc.u == 1.0 and sc.n == 2

    def test_empty_u_list_manifest_only(self, tmp_path):
        out = tmp_path / "gen"
        rc = main(["generate", "--system", "linear", "--out", str(out)])
        assert rc == 0
        files = sorted(p.name for p in out.iterdir())
        assert files == ["manifest.json"]

    def test_write_once(self, tmp_path):
        out = tmp_path / "gen"
        assert main(["generate", "--system", "linear", "--u", "1", "--out", str(out)]) == 0
        rc = main(["generate", "--system", "linear", "--u", "1", "--out", str(out)])
        assert rc == 5  # refuses to overwrite an existing run directory


class TestTrain:
    def test_train_success(self, tmp_path, scenario_files):
        cfg = write_train_config(tmp_path / "cfg.json", scenario_files)
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        assert (out / "checkpoint.json").exists()
        report = json.loads((out / "train_report.json").read_text())
        assert report["epochs_completed"] == 2
        assert not report["diverged"]
        params = load_checkpoint(out / "checkpoint.json")
        assert params.spec.output_dim == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 0
        assert "checkpoint.json" in manifest["outputs"]

    def test_invalid_config_exit_2_no_outputs(self, tmp_path, scenario_files):
        cfg = write_train_config(
            tmp_path / "cfg.json", scenario_files, loss_weights=[1.0, -0.5]
        )
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 2
        assert not out.exists()

    def test_unknown_config_key_exit_2(self, tmp_path, scenario_files):
        cfg = write_train_config(tmp_path / "cfg.json", scenario_files, batchsize=4)
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == 2

    def test_missing_scenario_file_exit_3(self, tmp_path):
        cfg = write_train_config(tmp_path / "cfg.json", [tmp_path / "absent.csv"])
        rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
        assert rc == 3

    def test_missing_config_exit_5(self, tmp_path):
        rc = main(
            ["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]
        )
        assert rc == 5

    def test_rerun_same_config_identical(self, tmp_path, scenario_files):
        cfg = write_train_config(tmp_path / "cfg.json", scenario_files)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(out2)]) == 0
        rep1 = json.loads((out1 / "train_report.json").read_text())
        rep2 = json.loads((out2 / "train_report.json").read_text())
        assert rep1["loss_history"] == rep2["loss_history"]
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["config_hash"] == m2["config_hash"]

    def test_seed_override_changes_hash(self, tmp_path, scenario_files):
        cfg = write_train_config(tmp_path / "cfg.json", scenario_files)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(out2), "--seed", "7"]) == 0
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["config_hash"] != m2["config_hash"]
        assert m2["seed"] == 7


class TestSweepCompare:
    @pytest.fixture()
    def checkpoints(self, tmp_path, scenario_files):
        cfg = write_train_config(tmp_path / "cfg.json", scenario_files, epochs=3)
        out_a = tmp_path / "model_a"
        out_b = tmp_path / "model_b"
        assert main(["train", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert (
            main(["train", "--config", str(cfg), "--out", str(out_b), "--seed", "5"]) == 0
        )
        return out_a / "checkpoint.json", out_b / "checkpoint.json"

    def test_single_checkpoint_single_u(self, tmp_path, checkpoints):
        ckpt, _ = checkpoints
        out = tmp_path / "sweep"
        rc = main(
            [
                "sweep",
                "--checkpoint",
                str(ckpt),
                "--u",
                "1.0",
                "--system",
                "oscillator",
                "--t-end",
                "2.0",
                "--points",
                "12",
                "--solver",
                "rk4:0.05",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model"]["u_values"] == [1.0]
        assert len(report["model"]["nmse"]) == 1
        csv_text = (out / "nmse_vs_u.csv").read_text().splitlines()
        assert csv_text[0].startswith("u,model:x")

    def test_paired_compare_with_traces(self, tmp_path, checkpoints):
        ckpt_a, ckpt_b = checkpoints
        out = tmp_path / "cmp"
        rc = main(
            [
                "compare",
                "--checkpoint",
                str(ckpt_a),
                "--baseline",
                str(ckpt_b),
                "--u-min",
                "0.5",
                "--u-max",
                "1.5",
                "--u-step",
                "0.5",
                "--system",
                "oscillator",
                "--t-end",
                "2.0",
                "--points",
                "12",
                "--solver",
                "rk4:0.05",
                "--trace",
                "1.0",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model"]["u_values"] == [0.5, 1.0, 1.5]
        assert "baseline" in report
        assert "worst_case_ratio_baseline_over_model" in report
        assert (out / "traces_model_u1_states.csv").exists()
        assert (out / "traces_model_u1_sensitivities.csv").exists()
        assert (out / "traces_baseline_u1_states.csv").exists()

    def test_compare_requires_baseline(self, tmp_path, checkpoints):
        ckpt, _ = checkpoints
        rc = main(
            [
                "compare",
                "--checkpoint",
                str(ckpt),
                "--u",
                "1.0",
                "--out",
                str(tmp_path / "x"),
            ]
        )
        assert rc == 2

    def test_missing_checkpoint_exit_5(self, tmp_path):
        rc = main(
            [
                "sweep",
                "--checkpoint",
                str(tmp_path / "none.json"),
                "--u",
                "1.0",
                "--out",
                str(tmp_path / "s"),
            ]
        )
        assert rc == 5

    def test_data_directory_ground_truth(self, tmp_path, checkpoints, scenario_files):
        ckpt, _ = checkpoints
        out = tmp_path / "sweep_data"
        rc = main(
            [
                "sweep",
                "--checkpoint",
                str(ckpt),
                "--data",
                str(scenario_files[0].parent),
                "--solver",
                "rk4:0.05",
                "--out",
                str(out),
            ]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["model"]["u_values"] == [1.0, 1.1]


class TestExportFixtures:
    def test_default_set(self, tmp_path):
        out = tmp_path / "fx"
        rc = main(["export-fixtures", "--points", "20", "--t-end", "1.0", "--out", str(out)])
        assert rc == 0
        files = sorted(p.name for p in out.glob("*.csv"))
        assert files == [
            "ibr_u1.036.csv",
            "ibr_u1.039.csv",
            "ibr_u1.04.csv",
            "ibr_u1.043.csv",
        ]
        sc = ingest_csv(out / "ibr_u1.039.csv")
        assert sc.m == 2 and sc.state_names == ("I_d", "I_q")
