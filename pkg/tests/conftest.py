"""Shared fixtures: toy configurations sized for CPU-minutes test runs."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from mmadapt.config import (
    AdapterConfig,
    AugmentConfig,
    BackboneConfig,
    DataConfig,
    FusionConfig,
    HeadConfig,
    ModelConfig,
    OhemConfig,
    OutputConfig,
    RunConfig,
    ScheduleConfig,
    TrainingConfig,
)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def toy_backbone_config(**overrides) -> BackboneConfig:
    base = dict(patch_size=16, embed_dim=64, depth=8, num_groups=4, num_heads=4, image_size=64)
    base.update(overrides)
    return BackboneConfig(**base)


def toy_model_config(fusion_kind: str = "road_fusion", **kwargs) -> ModelConfig:
    return ModelConfig(
        backbone=toy_backbone_config(**kwargs.pop("backbone", {})),
        fusion=FusionConfig(
            kind=fusion_kind,
            encoder_channels=(8, 16, 32, 64),
            encoder_depths=(1, 1, 1, 1),
            target_dim=64,
            attn_heads=2,
            **kwargs.pop("fusion", {}),
        ),
        adapter=AdapterConfig(num_pairs=4, msda_heads=4, msda_points=2, **kwargs.pop("adapter", {})),
        head=HeadConfig(num_classes=4, decoder_dim=32, **kwargs.pop("head", {})),
    )


def tiny_model_config(fusion_kind: str = "road_fusion", gamma_init: float = 0.0) -> ModelConfig:
    """Smallest legal model; used for finite-difference checks."""
    return ModelConfig(
        backbone=BackboneConfig(
            patch_size=16, embed_dim=16, depth=4, num_groups=4, num_heads=2, image_size=32
        ),
        fusion=FusionConfig(
            kind=fusion_kind,
            encoder_channels=(4, 8, 16, 32),
            encoder_depths=(1, 1, 1, 1),
            target_dim=16,
            attn_heads=2,
        ),
        adapter=AdapterConfig(num_pairs=4, msda_heads=2, msda_points=2, gamma_init=gamma_init),
        head=HeadConfig(num_classes=3, decoder_dim=8),
    )


def surrogate_run_config(data_root: str, run_dir: str, use_aux: bool, epochs: int = 14,
                         seed: int = 7, finetune: bool = True) -> RunConfig:
    """Desk-scale training config for the synthetic benchmark comparisons."""
    size = 64
    return RunConfig(
        model=ModelConfig(
            backbone=BackboneConfig(
                patch_size=16, embed_dim=64, depth=4, num_groups=4, num_heads=4,
                image_size=size, finetune=finetune,
            ),
            fusion=FusionConfig(
                kind="concatenation",
                encoder_channels=(16, 32, 64, 128),
                encoder_depths=(1, 1, 1, 1),
                target_dim=64,
                attn_heads=2,
                use_aux=use_aux,
            ),
            adapter=AdapterConfig(num_pairs=4, msda_heads=4, msda_points=4),
            head=HeadConfig(num_classes=4, decoder_dim=64),
        ),
        training=TrainingConfig(
            schedule=ScheduleConfig(
                eta_base=2e-3, warmup_epochs=min(1, epochs - 1), total_epochs=epochs,
                weight_decay=1e-2,
            ),
            ohem=OhemConfig(min_kept=size * size // 16),
            augment=AugmentConfig(
                resize_range=(0.75, 1.25), hflip_prob=0.5, photometric=False,
                blur_prob=0.0, crop_size=size,
            ),
            seed=seed,
            epochs=epochs,
            accumulation=1,
            micro_batch=8,
            val_interval=4,
        ),
        data=DataConfig(root=data_root, train_split="train", val_split="val", eval_split="test"),
        output=OutputConfig(run_dir=run_dir),
    )


@pytest.fixture()
def toy_model():
    from mmadapt.model import MultimodalSegmenter

    torch.manual_seed(0)
    return MultimodalSegmenter(toy_model_config())


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, "PASS" if status == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
