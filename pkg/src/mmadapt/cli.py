"""Command-line front end: train, eval, predict, split-assist, synth."""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np
from PIL import Image

from .config import RunConfig, load_config
from .data import (
    Normalizer,
    SampleRecord,
    SegmentationFolder,
    SplitManifest,
    load_aux_raster,
)
from .errors import ConfigError, DataError
from .inference import Predictor
from .metrics import evaluate_split, rank_hard_candidates
from .model import MultimodalSegmenter
from .synthetic import SynthSpec, generate_synthetic
from .trainer import Trainer, load_model_checkpoint

RUN_ROOT_ENV = "MMADAPT_RUN_ROOT"


def _resolve_run_dir(cfg: RunConfig, config_path: str) -> Path:
    if cfg.output.run_dir:
        return Path(cfg.output.run_dir)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / Path(config_path).stem


@contextmanager
def _run_lock(run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise click.ClickException(
            f"run dir {run_dir} is locked by another process (remove {lock} if stale)"
        )
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_cfg(config_path: str, overrides: tuple[str, ...], seed: int | None) -> RunConfig:
    try:
        cfg = load_config(config_path, list(overrides))
    except ConfigError as e:
        raise click.ClickException(f"invalid config: {e}")
    if seed is not None:
        cfg.training.seed = seed
    return cfg


def _load_predictor(cfg: RunConfig, checkpoint: str, device: str) -> Predictor:
    model = MultimodalSegmenter(cfg.model)
    meta = load_model_checkpoint(checkpoint, model)
    normalizer = Normalizer.from_dict(meta["normalizer"]) if "normalizer" in meta else Normalizer()
    return Predictor(model, normalizer, device)


def _load_unlabeled(input_dir: Path, sample_id: str) -> SampleRecord:
    """Load an rgb/aux pair for prediction; labels are not required."""
    rgb_path = input_dir / "rgb" / f"{sample_id}.png"
    aux_path = input_dir / "aux" / f"{sample_id}.png"
    rgb = np.array(Image.open(rgb_path).convert("RGB")).astype(np.float32) / 255.0
    if not aux_path.is_file():
        raise DataError(f"sample {sample_id!r}: missing aux file")
    aux = load_aux_raster(aux_path)
    if rgb.shape[:2] != aux.shape[:2]:
        raise DataError(f"sample {sample_id!r}: misaligned rasters")
    label = np.zeros(rgb.shape[:2], dtype=np.int64)
    return SampleRecord(id=sample_id, rgb=rgb, aux=aux, label=label)


def class_palette(num_classes: int) -> np.ndarray:
    """Deterministic, injective class->color map (uint8, num_classes x 3)."""
    hues = (np.arange(num_classes) * 0.61803398875) % 1.0
    colors = []
    for i, h in enumerate(hues):
        v = 0.95 if i % 2 == 0 else 0.7
        k = h * 6.0
        x = v * (1.0 - abs(k % 2 - 1))
        sector = int(k) % 6
        rgb = [(v, x, 0), (x, v, 0), (0, v, x), (0, x, v), (x, 0, v), (v, 0, x)][sector]
        colors.append([int(255 * c) for c in rgb])
    palette = np.array(colors, dtype=np.uint8)
    # Nudge any accidental duplicates apart so the map stays injective.
    seen = set()
    for i in range(num_classes):
        while tuple(palette[i]) in seen:
            palette[i, i % 3] = (int(palette[i, i % 3]) + 17) % 256
        seen.add(tuple(palette[i]))
    return palette


_config_opt = click.option("--config", "config_path", required=True, type=click.Path(exists=True))
_set_opt = click.option("--set", "overrides", multiple=True, help="Override config values: key.path=value")
_seed_opt = click.option("--seed", type=int, default=None, help="Override training.seed")
_device_opt = click.option("--device", default="cpu", show_default=True)


@click.group()
def main():
    """Multimodal side-adapter segmentation toolkit."""


@main.command("train")
@_config_opt
@_set_opt
@_seed_opt
@_device_opt
def cmd_train(config_path, overrides, seed, device):
    """Train a model; writes config snapshot, checkpoints and metrics into the run dir."""
    cfg = _load_cfg(config_path, overrides, seed)
    run_dir = _resolve_run_dir(cfg, config_path)
    with _run_lock(run_dir):
        trainer = Trainer(cfg, device=device, run_dir=run_dir)
        result = trainer.train()
    click.echo(f"run dir: {result.run_dir}")
    click.echo(f"final checkpoint: {result.final_checkpoint}")
    if result.best_val_miou is not None:
        click.echo(f"best val mIoU: {result.best_val_miou:.4f}")


@main.command("eval")
@_config_opt
@_set_opt
@_seed_opt
@_device_opt
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Report directory")
def cmd_eval(config_path, overrides, seed, device, checkpoint, manifest_path, out_dir):
    """Evaluate a checkpoint; emits all/easy/hard mIoU reports."""
    cfg = _load_cfg(config_path, overrides, seed)
    predictor = _load_predictor(cfg, checkpoint, device)
    dataset = SegmentationFolder(cfg.data.root, cfg.data.eval_split)
    manifest = None
    if manifest_path or cfg.data.manifest:
        manifest = SplitManifest.load(manifest_path or cfg.data.manifest)
    try:
        reports = evaluate_split(
            predictor, dataset, manifest,
            num_classes=cfg.model.head.num_classes,
            ignore_index=cfg.model.head.ignore_index,
        )
    except DataError as e:
        raise click.ClickException(str(e))
    out = Path(out_dir or Path(checkpoint).parent / "eval")
    out.mkdir(parents=True, exist_ok=True)
    payload = {name: report.to_dict() for name, report in reports.items()}
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    for name, report in reports.items():
        click.echo(f"{name}: mIoU {report.miou:.4f} over {report.num_samples} samples")
    click.echo(f"report: {out / 'report.json'}")


@main.command("predict")
@_config_opt
@_set_opt
@_seed_opt
@_device_opt
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_predict(config_path, overrides, seed, device, checkpoint, input_dir, out_dir):
    """Write one raw label map and one palette-colorized image per input sample."""
    cfg = _load_cfg(config_path, overrides, seed)
    predictor = _load_predictor(cfg, checkpoint, device)
    palette = class_palette(cfg.model.head.num_classes)
    input_dir = Path(input_dir)
    rgb_dir = input_dir / "rgb"
    ids = sorted(p.stem for p in rgb_dir.glob("*.png")) if rgb_dir.is_dir() else []
    out = Path(out_dir)
    (out / "raw").mkdir(parents=True, exist_ok=True)
    (out / "color").mkdir(parents=True, exist_ok=True)
    failures = 0
    for sample_id in ids:
        try:
            sample = _load_unlabeled(input_dir, sample_id)
            pred = predictor(sample)
        except (DataError, OSError, ValueError) as e:
            click.echo(f"warning: {sample_id}: {e}", err=True)
            failures += 1
            continue
        Image.fromarray(pred.astype(np.uint8), mode="L").save(out / "raw" / f"{sample_id}.png")
        Image.fromarray(palette[pred], mode="RGB").save(out / "color" / f"{sample_id}.png")
    if ids and failures == len(ids):
        raise click.ClickException("all inputs failed")
    click.echo(f"wrote {len(ids) - failures} predictions to {out}")


@main.command("split-assist")
@_config_opt
@_set_opt
@_seed_opt
@_device_opt
@click.option("--checkpoint", required=True, type=click.Path(exists=True),
              help="RGB-only baseline checkpoint (fusion.use_aux=false)")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_split_assist(config_path, overrides, seed, device, checkpoint, out_path):
    """Rank samples by RGB-only failure for human curation of the hard split."""
    cfg = _load_cfg(config_path, overrides, seed)
    if cfg.model.fusion.use_aux:
        raise click.ClickException(
            "split-assist requires an RGB-only model: set model.fusion.use_aux=false"
        )
    predictor = _load_predictor(cfg, checkpoint, device)
    dataset = SegmentationFolder(cfg.data.root, cfg.data.eval_split)
    preds, gts = {}, {}
    for sample in dataset:
        preds[sample.id] = predictor(sample)
        gts[sample.id] = sample.label
    ranking = rank_hard_candidates(
        preds, gts, cfg.model.head.num_classes, cfg.model.head.ignore_index
    )
    payload = [
        {"id": sample_id, "deficit": deficit, "miou": 1.0 - deficit}
        for sample_id, deficit in ranking
    ]
    Path(out_path).write_text(json.dumps(payload, indent=2))
    click.echo(f"ranked {len(payload)} candidates -> {out_path}")


@main.command("synth")
@click.option("--out", "out_root", required=True, type=click.Path())
@click.option("--n", required=True, type=int)
@click.option("--size", default=64, show_default=True, type=int)
@click.option("--classes", "num_classes", default=4, show_default=True, type=int)
@click.option("--hard-fraction", default=0.2, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--split", default="train", show_default=True)
def cmd_synth(out_root, n, size, num_classes, hard_fraction, seed, split):
    """Generate a synthetic multimodal dataset split with its easy/hard manifest."""
    spec = SynthSpec(n=n, size=size, num_classes=num_classes, hard_fraction=hard_fraction, seed=seed)
    try:
        dataset, manifest = generate_synthetic(spec, out_root, split=split)
    except (ValueError, DataError) as e:
        raise click.ClickException(str(e))
    click.echo(
        f"wrote {len(dataset)} samples to {out_root}/{split} "
        f"({len(manifest.hard)} hard, {len(manifest.easy)} easy)"
    )


if __name__ == "__main__":
    main()
