import json
import subprocess
import sys

import pytest

from iasdetect import cli
from iasdetect.config import DEFAULT_OUTPUT, ENV_OUTPUT_ROOT, PipelineConfig
from iasdetect.pipeline import MissingArtifact, Workspace

TINY = {
    "data_size": 200, "enc_max_epochs": 12, "enc_learning_rate": 0.002, "aux_max_epochs": 5, "attack_quota": 3,
    "det_max_epochs": 3, "det_seeds": [0], "sweep_fractions": [0.5, 1.0], "transfer_fractions": [0.5],
    "compare_presets": ["small"], "analysis_trajectories": 2, "max_len": 16,
}
SECTIONS = {"config", "encoder_metrics", "benchmark_stats", "detection", "ablations", "transfer", "analysis"}


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(seed=3, det_seeds=(4, 5))
        cfg.save(tmp_path / "c.json")
        back = PipelineConfig.load(tmp_path / "c.json")
        assert back == cfg and back.config_hash() == cfg.config_hash()

    def test_hash_tracks_settings_but_not_output_dir(self):
        a = PipelineConfig()
        assert PipelineConfig(output_dir="/elsewhere").config_hash() == a.config_hash()
        assert PipelineConfig(seed=1).config_hash() != a.config_hash()
        assert len(a.config_hash()) == 16

    def test_rejects_unknown_values(self):
        with pytest.raises(ValueError):
            PipelineConfig.from_dict({"no_such_key": 1})
        with pytest.raises(ValueError):
            PipelineConfig(task="imaginary")
        with pytest.raises(ValueError):
            PipelineConfig(attack_types=("word-deletion", "teleport"))
        with pytest.raises(ValueError):
            PipelineConfig(task="external")

    def test_output_resolution(self, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT_ROOT, raising=False)
        assert str(PipelineConfig().resolve_output()) == DEFAULT_OUTPUT
        monkeypatch.setenv(ENV_OUTPUT_ROOT, "/tmp/x")
        assert str(PipelineConfig().resolve_output()) == "/tmp/x"
        assert str(PipelineConfig(output_dir="/tmp/y").resolve_output()) == "/tmp/y"


class TestCLIParsing:
    def test_overrides_and_types(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 7, "attack_quota": 5}))
        args = cli.build_parser().parse_args(
            ["attack", "--config", str(tmp_path / "c.json"), "--attack-quota", "9", "--det-seeds", "1,2",
             "--feature-zscore", "true", "--cutmix-ratio", "0.5"])
        cfg = cli.config_from_args(args)
        assert (cfg.seed, cfg.attack_quota, cfg.det_seeds, cfg.feature_zscore, cfg.cutmix_ratio) == (7, 9, (1, 2), True, 0.5)

    def test_every_command_registered(self):
        parser = cli.build_parser()
        for name in cli.ORDER + ("run-all",):
            assert parser.parse_args([name]).command == name

    def test_help_runs_as_module(self):
        out = subprocess.run([sys.executable, "-m", "iasdetect", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "extract-features" in out.stdout

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        assert cli.main(["gen-data", "--task", "nope", "--output-dir", str(tmp_path)]) == 1
        assert "task must be one of" in capsys.readouterr().err


class TestArtifacts:
    def test_missing_artifact_names_producer(self, tmp_path, capsys):
        assert cli.main(["train-detector", "--output-dir", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "encoder_metrics.json" in err and "run `iasdetect train-encoder` first" in err

    def test_stale_artifact_reported(self, tmp_path, capsys):
        ws = Workspace(PipelineConfig(output_dir=str(tmp_path)))
        ws.path("data/train.jsonl").write_text("")
        ws.record("data/train.jsonl", "gen-data")
        other = Workspace(PipelineConfig(output_dir=str(tmp_path), seed=9))
        with pytest.raises(MissingArtifact, match="produced under config"):
            other.require("data/train.jsonl", "gen-data")
        assert ws.fresh("data/train.jsonl") and not other.fresh("data/train.jsonl")


def run_tiny(out_dir):
    cfg_path = out_dir.parent / f"{out_dir.name}.json"
    cfg_path.write_text(json.dumps(TINY))
    assert cli.main(["run-all", "--config", str(cfg_path), "--output-dir", str(out_dir)]) == 0
    return json.loads((out_dir / "results.json").read_text())


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    return run_tiny(base / "a"), run_tiny(base / "b"), base


class TestEndToEnd:
    def test_rerun_is_identical(self, tiny_runs):
        a, b, _ = tiny_runs
        assert a == b

    def test_results_sections(self, tiny_runs):
        a, _, base = tiny_runs
        assert set(a) == SECTIONS
        assert a["config"]["config_hash"] == PipelineConfig.from_dict(TINY).config_hash()
        manifest = json.loads((base / "a" / "manifest.json").read_text())["artifacts"]
        assert {e["config_hash"] for e in manifest.values()} == {a["config"]["config_hash"]}

    def test_figures_and_tables(self, tiny_runs):
        _, _, base = tiny_runs
        figs = base / "a" / "figures"
        for name in ("gate_trajectories", "active_heads", "flip_target_cdf", "detector_cdf", "train_size", "mask_pca"):
            assert (figs / f"{name}.csv").stat().st_size > 0
            assert (figs / f"{name}.png").read_bytes()[:4] == b"\x89PNG"
        for name in ("per_attack_accuracy", "ablations", "transfer", "compare_size"):
            assert (figs / f"{name}.csv").exists()

    def test_transfer_schema(self, tiny_runs):
        t = tiny_runs[0]["transfer"]
        assert set(t) >= {"rows", "full_training_accuracy", "full_per_seed"}
        for row in t["rows"]:
            assert set(row) >= {"fraction", "seen_types", "new_types_accuracy", "all_types_accuracy"}
            assert 0.0 <= row["new_types_accuracy"] <= 1.0 and 0.0 <= row["all_types_accuracy"] <= 1.0

    def test_report_refuses_mixed_hashes(self, tiny_runs, capsys):
        _, _, base = tiny_runs
        path = base / "b" / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["artifacts"]["small/detection.json"]["config_hash"] = "0" * 16
        path.write_text(json.dumps(manifest))
        assert cli.main(["report", "--config", str(base / "b.json"), "--output-dir", str(base / "b")]) == 2
        assert "refusing to mix" in capsys.readouterr().err
