"""End-to-end CLI behaviour: pipeline, exit codes, artifact determinism."""

import json

import numpy as np
import pytest

from condsum.cli import main, plot_scores

TRAIN_ARGS = [
    "--dataset", "synthetic", "--splits", "2", "--epochs", "10", "--max-steps", "40",
    "--learning-rate", "1e-3", "--batch-size", "16", "--encoder", "toy",
    "--latent-dim", "4", "--hidden-dim", "8",
]


def run_pipeline(out_dir, seed="13"):
    out = str(out_dir)
    assert main(["build-dataset", "--out-dir", out, "--seed", seed,
                 "--n-videos", "5", "--n-frames", "16"]) == 0
    manifest = str(out_dir / "dataset" / "manifest.json")
    sidecar = str(out_dir / "interventions.json")
    assert main(["train", "--manifest", manifest, "--interventions", sidecar,
                 "--out-dir", out, "--seed", seed, *TRAIN_ARGS]) == 0
    assert main(["eval", "--manifest", manifest, "--dataset", "synthetic",
                 "--checkpoint-dir", str(out_dir / "checkpoints"),
                 "--splits", "2", "--out-dir", out, "--seed", seed,
                 "--budget-frac", "0.25"]) == 0
    assert main(["summarize", "--manifest", manifest, "--dataset", "synthetic",
                 "--checkpoint", str(out_dir / "checkpoints" / "split0_best.ckpt"),
                 "--video-id", "syn000", "--budget-frac", "0.25",
                 "--out-dir", out, "--seed", seed]) == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run1"
    run_pipeline(out)
    return out


class TestPipeline:
    def test_dataset_artifacts(self, pipeline):
        manifest = json.loads((pipeline / "dataset" / "manifest.json").read_text())
        assert manifest["dataset"] == "synthetic"
        assert len(manifest["videos"]) == 5
        sidecar = json.loads((pipeline / "interventions.json").read_text())
        assert len(sidecar["assignments"]) == 5

    def test_train_artifacts(self, pipeline):
        for s in range(2):
            assert (pipeline / "checkpoints" / f"split{s}_final.ckpt").exists()
            assert (pipeline / "checkpoints" / f"split{s}_best.ckpt").exists()
            lines = (pipeline / f"loss_split{s}.csv").read_text().strip().split("\n")
            assert lines[0].startswith("step,total,")
            assert len(lines) == 41  # header + 40 steps

    def test_eval_artifacts(self, pipeline):
        report = json.loads((pipeline / "eval_report.json").read_text())
        assert len(report["split_f1"]) == 2
        assert 0.0 <= report["mean_f1"] <= 1.0
        csvs = list(pipeline.glob("scores_split*.csv"))
        assert csvs
        header = csvs[0].read_text().split("\n")[0]
        assert header == "frame_index,score,selected,ground_truth"

    def test_summary_artifact(self, pipeline):
        payload = json.loads((pipeline / "summary_syn000.json").read_text())
        assert payload["n_frames"] == 16
        assert payload["budget"] == 4
        assert sum(payload["mask"]) <= 4
        assert payload["selected_indices"] == [i for i, m in enumerate(payload["mask"]) if m]

    def test_plot_from_eval_scores(self, pipeline):
        csv = sorted(pipeline.glob("scores_split*.csv"))[0]
        out = pipeline / "plot.png"
        assert main(["plot-scores", str(csv), "--out", str(out)]) == 0
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_repeat_run_is_byte_identical(self, pipeline, tmp_path):
        rerun = tmp_path / "run2"
        run_pipeline(rerun)
        for rel in ["dataset/manifest.json", "interventions.json", "eval_report.json",
                    "loss_split0.csv", "loss_split1.csv", "summary_syn000.json"]:
            a = (pipeline / rel).read_bytes()
            b = (rerun / rel).read_bytes()
            assert a == b, f"{rel} differs between identical runs"


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self):
        assert main(["transmogrify"]) == 1

    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_missing_required_flag_is_usage_error(self):
        assert main(["train"]) == 1

    def test_missing_manifest_is_data_error(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "nope.json"),
                     "--out-dir", str(tmp_path)]) == 2

    def test_missing_checkpoints_is_data_error(self, pipeline, tmp_path):
        manifest = str(pipeline / "dataset" / "manifest.json")
        assert main(["eval", "--manifest", manifest, "--checkpoint-dir",
                     str(tmp_path / "void"), "--splits", "2",
                     "--out-dir", str(tmp_path)]) == 2

    def test_missing_csv_is_data_error(self, tmp_path):
        assert main(["plot-scores", str(tmp_path / "nope.csv"),
                     "--out-dir", str(tmp_path)]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "build-dataset" in capsys.readouterr().out


class TestConfigAndEnv:
    def test_out_dir_env_default(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CONDSUM_OUT_DIR", str(tmp_path / "envout"))
        assert main(["build-dataset", "--seed", "3", "--n-videos", "4",
                     "--n-frames", "8"]) == 0
        assert (tmp_path / "envout" / "dataset" / "manifest.json").exists()

    def test_config_file_supplies_defaults_and_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n-videos": 3, "n-frames": 8, "seed": 5}))
        out = tmp_path / "a"
        assert main(["build-dataset", "--config", str(cfg), "--out-dir", str(out)]) == 0
        manifest = json.loads((out / "dataset" / "manifest.json").read_text())
        assert len(manifest["videos"]) == 3
        out2 = tmp_path / "b"
        assert main(["build-dataset", "--config", str(cfg), "--out-dir", str(out2),
                     "--n-videos", "2"]) == 0
        manifest2 = json.loads((out2 / "dataset" / "manifest.json").read_text())
        assert len(manifest2["videos"]) == 2


def test_plot_bar_count_matches_rows(tmp_path):
    rng = np.random.default_rng(0)
    csv_path = tmp_path / "scores.csv"
    with open(csv_path, "w") as fh:
        fh.write("frame_index,score,selected,ground_truth\n")
        for i in range(199):
            fh.write(f"{i},{rng.random()},{int(rng.random() < 0.2)},0\n")
    out = tmp_path / "bars.png"
    assert plot_scores(csv_path, out) == 199
    assert out.exists()
