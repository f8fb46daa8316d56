"""Synthetic multimodal benchmark generator.

Scenes are colored geometric shapes on a textured background; the label map
is the shape class. The auxiliary raster encodes the same geometry through
class-correlated intensity levels and never depends on the RGB values. A
configurable fraction of samples has the RGB globally darkened to near-black
plus noise (RGB uninformative) while the auxiliary raster stays clean; those
ids form the hard half of the built-in split manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np

from .data import DatasetDescriptor, SegmentationFolder, SplitManifest, write_sample
from .errors import DataError

# Upper bound on mean |rgb| of a darkened sample; the generator stays well under it.
HARD_DARKNESS_BUDGET = 0.05
# Auxiliary intensity noise amplitude; strictly below half the level gap for
# any num_classes <= 6 so nearest-level decoding recovers the label exactly.
_AUX_NOISE = 0.08

_PALETTE = np.array(
    [
        [0.35, 0.35, 0.35],  # background
        [0.85, 0.20, 0.15],
        [0.20, 0.75, 0.25],
        [0.15, 0.30, 0.85],
        [0.85, 0.75, 0.15],
        [0.70, 0.20, 0.75],
    ],
    dtype=np.float32,
)


@dataclass
class SynthSpec:
    n: int
    size: int = 64
    num_classes: int = 4
    hard_fraction: float = 0.2
    seed: int = 0

    def validate(self):
        if not 0 <= self.hard_fraction <= 1:
            raise ValueError(f"hard_fraction must be in [0, 1], got {self.hard_fraction}")
        if self.size % 32 != 0:
            raise ValueError(f"size must be divisible by 32, got {self.size}")
        if not 2 <= self.num_classes <= len(_PALETTE):
            raise ValueError(f"num_classes must be in [2, {len(_PALETTE)}], got {self.num_classes}")
        return self


def class_intensity_levels(num_classes: int) -> np.ndarray:
    """Evenly spaced auxiliary intensity per class, background at 0."""
    return np.linspace(0.0, 1.0, num_classes).astype(np.float32)


def _shape_mask(kind: int, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    dy, dx = ys - cy, xs - cx
    if kind == 0:  # disk
        return dy * dy + dx * dx <= radius * radius
    if kind == 1:  # square
        return (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    return np.abs(dy) + np.abs(dx) <= radius * 1.3  # diamond


def _render_scene(rng: np.random.Generator, size: int, num_classes: int):
    label = np.zeros((size, size), dtype=np.int64)
    num_shapes = int(rng.integers(2, 5))
    for _ in range(num_shapes):
        cls = int(rng.integers(1, num_classes))
        kind = int(rng.integers(0, 3))
        cy, cx = rng.uniform(0.15 * size, 0.85 * size, size=2)
        radius = rng.uniform(0.08 * size, 0.22 * size)
        label[_shape_mask(kind, size, cy, cx, radius)] = cls
    levels = class_intensity_levels(num_classes)
    aux = levels[label] + rng.uniform(-_AUX_NOISE, _AUX_NOISE, size=label.shape).astype(np.float32)
    aux = np.clip(aux, 0.0, 1.0)
    rgb = _PALETTE[label] + rng.normal(0.0, 0.05, size=(size, size, 3)).astype(np.float32)
    rgb = np.clip(rgb, 0.0, 1.0)
    return rgb, aux, label


def _darken(rng: np.random.Generator, rgb: np.ndarray) -> np.ndarray:
    dark = rgb * 0.01 + rng.normal(0.0, 0.01, size=rgb.shape).astype(np.float32)
    return np.clip(dark, 0.0, 0.04)


def generate_synthetic(
    spec: SynthSpec, out_root: str | Path, split: str = "train"
) -> tuple[SegmentationFolder, SplitManifest]:
    """Write the dataset split, descriptor, and manifest; returns the loaded views.

    Bit-identical output for a fixed spec: each sample derives its RNG from
    (seed, index) and the hard subset is a seeded choice of round(f * n) ids.
    """
    spec.validate()
    out_root = Path(out_root)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output root {out_root}: {e}") from e

    num_hard = int(round(spec.hard_fraction * spec.n))
    picker = np.random.default_rng([spec.seed, 0xD06])
    hard_indices = set(picker.choice(spec.n, size=num_hard, replace=False).tolist()) if num_hard else set()

    split_dir = out_root / split
    easy_ids, hard_ids = [], []
    conditions = {}
    for index in range(spec.n):
        rng = np.random.default_rng([spec.seed, index])
        rgb, aux, label = _render_scene(rng, spec.size, spec.num_classes)
        sample_id = f"{split}_{index:05d}"
        if index in hard_indices:
            rgb = _darken(rng, rgb)
            hard_ids.append(sample_id)
            conditions[sample_id] = "dark"
        else:
            easy_ids.append(sample_id)
        write_sample(
            split_dir,
            sample_id,
            (rgb * 255.0).round().astype(np.uint8),
            (aux * 65535.0).round().astype(np.uint16),
            label.astype(np.uint8),
        )
    (split_dir / "conditions.json").write_text(json.dumps(conditions, indent=2, sort_keys=True))

    descriptor = DatasetDescriptor(
        num_classes=spec.num_classes,
        ignore_index=255,
        class_names=["background"] + [f"shape_{i}" for i in range(1, spec.num_classes)],
        aux_kind="synthetic_intensity",
    )
    descriptor.save(out_root)

    manifest = SplitManifest(easy=easy_ids, hard=hard_ids)
    manifest.save(out_root / f"{split}_manifest.json")
    return SegmentationFolder(out_root, split), manifest


def aux_intensity_baseline(aux: np.ndarray, num_classes: int) -> np.ndarray:
    """Nearest-intensity-level classifier over the auxiliary raster."""
    levels = class_intensity_levels(num_classes)
    flat = aux.reshape(-1, 1) if aux.ndim == 2 else aux.reshape(-1, aux.shape[-1])[:, :1]
    pred = np.abs(flat - levels[None, :]).argmin(axis=1)
    return pred.reshape(aux.shape[:2]).astype(np.int64)
