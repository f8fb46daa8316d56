"""CLI subcommands, config round trips, cross-command consistency."""

import json

import numpy as np
import pytest
import torch
import yaml
from click.testing import CliRunner
from PIL import Image

from conftest import surrogate_run_config
from mmadapt.cli import class_palette, main
from mmadapt.config import config_from_dict, config_to_dict, load_config
from mmadapt.data import Normalizer, SegmentationFolder, SplitManifest
from mmadapt.errors import ConfigError
from mmadapt.inference import Predictor
from mmadapt.metrics import evaluate_split, per_sample_miou
from mmadapt.model import MultimodalSegmenter
from mmadapt.synthetic import SynthSpec, generate_synthetic
from mmadapt.trainer import save_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic dataset, a tiny config file, and an untrained checkpoint."""
    root = tmp_path_factory.mktemp("cliws")
    data_root = root / "data"
    generate_synthetic(SynthSpec(n=6, size=32, num_classes=4, hard_fraction=0.34, seed=0),
                       data_root, split="train")
    generate_synthetic(SynthSpec(n=4, size=32, num_classes=4, hard_fraction=0.25, seed=1),
                       data_root, split="val")
    generate_synthetic(SynthSpec(n=4, size=32, num_classes=4, hard_fraction=0.25, seed=2),
                       data_root, split="test")

    cfg = surrogate_run_config(str(data_root), str(root / "run"), use_aux=True, epochs=1)
    cfg.model.backbone.image_size = 32
    cfg.model.backbone.embed_dim = 32
    cfg.model.backbone.depth = 4
    cfg.model.fusion.target_dim = 32
    cfg.model.fusion.encoder_channels = (4, 8, 16, 32)
    cfg.model.head.decoder_dim = 16
    cfg.training.augment.crop_size = 32
    cfg.training.ohem.min_kept = 64
    cfg.training.micro_batch = 3
    cfg.training.accumulation = 1
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))

    torch.manual_seed(0)
    model = MultimodalSegmenter(cfg.model)
    checkpoint = root / "model.ckpt"
    save_checkpoint(checkpoint, model, Normalizer(), cfg)
    return {"root": root, "data": data_root, "config": config_path,
            "checkpoint": checkpoint, "cfg": cfg}


class TestConfigHandling:
    def test_round_trip_identity(self, workspace):
        cfg = load_config(workspace["config"])
        rebuilt = config_from_dict(yaml.safe_load(yaml.safe_dump(config_to_dict(cfg))))
        assert rebuilt == cfg

    def test_override_precedence(self, workspace):
        cfg = load_config(workspace["config"], ["training.epochs=1"])
        assert cfg.training.epochs == 1
        cfg = load_config(workspace["config"], ["training.epochs=1", "training.epochs=3"])
        assert cfg.training.epochs == 3

    def test_invalid_enum_names_field_path(self, workspace):
        with pytest.raises(ConfigError, match="model.fusion.kind"):
            load_config(workspace["config"], ["model.fusion.kind=bogus"])

    def test_unknown_key_names_path(self, workspace):
        with pytest.raises(ConfigError, match="model.fusion.bogus"):
            load_config(workspace["config"], ["model.fusion.bogus=3"])

    def test_unknown_key_in_file_rejected(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("model:\n  backbone:\n    embed_dims: 64\n")
        with pytest.raises(ConfigError, match="embed_dims"):
            load_config(bad)


class TestCmdTrain:
    def test_writes_snapshot_and_metrics(self, workspace, tmp_path):
        run_dir = tmp_path / "run1"
        result = CliRunner().invoke(main, [
            "train", "--config", str(workspace["config"]),
            "--set", f"output.run_dir={run_dir}",
            "--set", "data.val_split=val",
        ])
        assert result.exit_code == 0, result.output
        assert (run_dir / "config.yaml").is_file()
        assert (run_dir / "metrics.ndjson").is_file()
        assert (run_dir / "final.ckpt").is_file()
        assert not (run_dir / ".lock").exists()
        snapshot = load_config(run_dir / "config.yaml")
        assert snapshot.output.run_dir == str(run_dir)

    def test_invalid_config_nonzero_exit_names_field(self, workspace):
        result = CliRunner().invoke(main, [
            "train", "--config", str(workspace["config"]),
            "--set", "model.fusion.kind=bogus",
        ])
        assert result.exit_code != 0
        assert "model.fusion.kind" in result.output

    def test_determinism_same_seed_same_metrics(self, workspace, tmp_path):
        outputs = []
        for name in ("a", "b"):
            run_dir = tmp_path / name
            result = CliRunner().invoke(main, [
                "train", "--config", str(workspace["config"]),
                "--set", f"output.run_dir={run_dir}",
                "--seed", "123",
            ])
            assert result.exit_code == 0, result.output
            outputs.append((run_dir / "metrics.ndjson").read_text())
        assert outputs[0] == outputs[1]

    def test_env_var_sets_default_run_root(self, workspace, tmp_path, monkeypatch):
        monkeypatch.setenv("MMADAPT_RUN_ROOT", str(tmp_path / "envroot"))
        result = CliRunner().invoke(main, [
            "train", "--config", str(workspace["config"]),
            "--set", "output.run_dir=null",
        ])
        assert result.exit_code == 0, result.output
        expected = tmp_path / "envroot" / "config"
        assert (expected / "final.ckpt").is_file()

    def test_lock_rejects_concurrent_writer(self, workspace, tmp_path):
        run_dir = tmp_path / "locked"
        run_dir.mkdir()
        (run_dir / ".lock").write_text("held")
        result = CliRunner().invoke(main, [
            "train", "--config", str(workspace["config"]),
            "--set", f"output.run_dir={run_dir}",
        ])
        assert result.exit_code != 0
        assert "locked" in result.output


class TestCmdEval:
    def test_no_manifest_reports_all_only(self, workspace, tmp_path):
        out = tmp_path / "rep"
        result = CliRunner().invoke(main, [
            "eval", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert set(report) == {"all"}

    def test_manifest_reports_match_library_evaluation(self, workspace, tmp_path):
        manifest_path = workspace["data"] / "test_manifest.json"
        out = tmp_path / "rep2"
        result = CliRunner().invoke(main, [
            "eval", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]),
            "--manifest", str(manifest_path), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())

        cfg = workspace["cfg"]
        model = MultimodalSegmenter(cfg.model)
        from mmadapt.trainer import load_model_checkpoint

        meta = load_model_checkpoint(workspace["checkpoint"], model)
        predictor = Predictor(model, Normalizer.from_dict(meta["normalizer"]))
        expected = evaluate_split(
            predictor, SegmentationFolder(workspace["data"], "test"),
            SplitManifest.load(manifest_path), num_classes=4,
        )
        for name, rep in expected.items():
            assert report[name]["miou"] == pytest.approx(rep.miou, abs=1e-12)
            assert report[name]["num_samples"] == rep.num_samples

    def test_idempotent_rerun(self, workspace, tmp_path):
        out = tmp_path / "rep3"
        args = ["eval", "--config", str(workspace["config"]),
                "--checkpoint", str(workspace["checkpoint"]), "--out", str(out)]
        assert CliRunner().invoke(main, args).exit_code == 0
        first = (out / "report.json").read_text()
        assert CliRunner().invoke(main, args).exit_code == 0
        assert (out / "report.json").read_text() == first


class TestCmdPredict:
    def test_outputs_raw_and_colorized(self, workspace, tmp_path):
        out = tmp_path / "preds"
        result = CliRunner().invoke(main, [
            "predict", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]),
            "--input", str(workspace["data"] / "test"), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        raw_files = sorted((out / "raw").glob("*.png"))
        color_files = sorted((out / "color").glob("*.png"))
        assert len(raw_files) == 4 and len(color_files) == 4
        for path in raw_files:
            values = np.array(Image.open(path))
            assert values.max() < 4

    def test_palette_injective(self):
        palette = class_palette(25)
        assert len({tuple(c) for c in palette}) == 25

    def test_works_without_labels(self, workspace, tmp_path):
        import shutil

        unlabeled = tmp_path / "unlabeled"
        shutil.copytree(workspace["data"] / "test" / "rgb", unlabeled / "rgb")
        shutil.copytree(workspace["data"] / "test" / "aux", unlabeled / "aux")
        out = tmp_path / "preds3"
        result = CliRunner().invoke(main, [
            "predict", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]),
            "--input", str(unlabeled), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert len(list((out / "raw").glob("*.png"))) == 4

    def test_rescoring_raw_outputs_matches_eval(self, workspace, tmp_path):
        out = tmp_path / "preds2"
        CliRunner().invoke(main, [
            "predict", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]),
            "--input", str(workspace["data"] / "test"), "--out", str(out),
        ])
        dataset = SegmentationFolder(workspace["data"], "test")

        def predict_from_disk(sample):
            return np.array(Image.open(out / "raw" / f"{sample.id}.png")).astype(np.int64)

        rescored = evaluate_split(predict_from_disk, dataset, None, num_classes=4)

        eval_out = tmp_path / "rep4"
        CliRunner().invoke(main, [
            "eval", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]), "--out", str(eval_out),
        ])
        report = json.loads((eval_out / "report.json").read_text())
        assert report["all"]["miou"] == pytest.approx(rescored["all"].miou, abs=1e-12)


class TestCmdSplitAssist:
    @pytest.fixture()
    def rgb_only(self, workspace, tmp_path_factory):
        root = tmp_path_factory.mktemp("rgbonly")
        cfg = load_config(workspace["config"], ["model.fusion.use_aux=false"])
        torch.manual_seed(1)
        model = MultimodalSegmenter(cfg.model)
        checkpoint = root / "rgb.ckpt"
        save_checkpoint(checkpoint, model, Normalizer(), cfg)
        config_path = root / "config.yaml"
        config_path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
        return {"config": config_path, "checkpoint": checkpoint, "cfg": cfg}

    def test_requires_rgb_only_model(self, workspace, tmp_path):
        result = CliRunner().invoke(main, [
            "split-assist", "--config", str(workspace["config"]),
            "--checkpoint", str(workspace["checkpoint"]),
            "--out", str(tmp_path / "rank.json"),
        ])
        assert result.exit_code != 0
        assert "use_aux" in result.output

    def test_ranked_output_sorted_and_consistent(self, workspace, rgb_only, tmp_path):
        out_path = tmp_path / "rank.json"
        result = CliRunner().invoke(main, [
            "split-assist", "--config", str(rgb_only["config"]),
            "--checkpoint", str(rgb_only["checkpoint"]), "--out", str(out_path),
        ])
        assert result.exit_code == 0, result.output
        ranking = json.loads(out_path.read_text())
        mious = [r["miou"] for r in ranking]
        assert mious == sorted(mious)
        ids = [r["id"] for r in ranking]
        for a, b in zip(ranking, ranking[1:]):
            if a["miou"] == b["miou"]:
                assert a["id"] < b["id"]

        # agrees with the library ranking path
        from mmadapt.trainer import load_model_checkpoint

        model = MultimodalSegmenter(rgb_only["cfg"].model)
        meta = load_model_checkpoint(rgb_only["checkpoint"], model)
        predictor = Predictor(model, Normalizer.from_dict(meta["normalizer"]))
        dataset = SegmentationFolder(workspace["data"], "test")
        for row in ranking:
            sample = dataset.load(row["id"])
            assert row["miou"] == pytest.approx(
                per_sample_miou(predictor(sample), sample.label, 4), abs=1e-12
            )


class TestCmdSynth:
    def test_wrapper_reports_counts(self, tmp_path):
        result = CliRunner().invoke(main, [
            "synth", "--out", str(tmp_path / "ds"), "--n", "10", "--size", "32",
            "--classes", "4", "--hard-fraction", "0.2", "--seed", "5",
        ])
        assert result.exit_code == 0, result.output
        assert "2 hard" in result.output
        dataset = SegmentationFolder(tmp_path / "ds", "train")
        assert len(dataset) == 10

    def test_invalid_spec_fails_cleanly(self, tmp_path):
        result = CliRunner().invoke(main, [
            "synth", "--out", str(tmp_path / "ds2"), "--n", "4", "--size", "33",
        ])
        assert result.exit_code != 0
        assert "divisible" in result.output
