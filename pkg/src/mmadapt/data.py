"""Canonical on-disk dataset layout and sample loading.

Layout: ``root/<split>/{rgb,aux,label}/<id>.png`` with an optional
``root/<split>/conditions.json`` tag map and a ``root/dataset.json``
descriptor. RGB is 8-bit color, aux is 8- or 16-bit grayscale, labels are
8-bit single channel. All three rasters of a sample must be pixel-aligned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

MODALITY_DIRS = ("rgb", "aux", "label")


@dataclass
class SampleRecord:
    """One pixel-aligned training/evaluation sample.

    rgb is float32 (H, W, 3) in [0, 1]; aux is float32 (H, W, 1) in [0, 1];
    label is int64 (H, W) with values below num_classes or ignore_index.
    """

    id: str
    rgb: np.ndarray
    aux: np.ndarray
    label: np.ndarray
    condition: str | None = None


@dataclass
class DatasetDescriptor:
    num_classes: int
    ignore_index: int = 255
    class_names: list[str] = field(default_factory=list)
    aux_kind: str = "raster"

    @classmethod
    def load(cls, root: str | Path) -> "DatasetDescriptor":
        path = Path(root) / "dataset.json"
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read dataset descriptor {path}: {e}") from e
        try:
            return cls(**data)
        except TypeError as e:
            raise DataError(f"{path}: malformed descriptor: {e}") from e

    def save(self, root: str | Path):
        payload = {
            "num_classes": self.num_classes,
            "ignore_index": self.ignore_index,
            "class_names": self.class_names,
            "aux_kind": self.aux_kind,
        }
        (Path(root) / "dataset.json").write_text(json.dumps(payload, indent=2))


@dataclass
class SplitManifest:
    """Partition of sample ids into RGB-easy and RGB-hard."""

    easy: list[str]
    hard: list[str]
    version: int = 1

    def __post_init__(self):
        easy, hard = set(self.easy), set(self.hard)
        if len(easy) != len(self.easy) or len(hard) != len(self.hard):
            raise DataError("manifest ids must be unique within each split")
        overlap = easy & hard
        if overlap:
            raise DataError(f"manifest easy/hard overlap: {sorted(overlap)[:5]}")

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read manifest {path}: {e}") from e
        if not isinstance(data, dict) or "easy" not in data or "hard" not in data:
            raise DataError(f"{path}: manifest must contain 'easy' and 'hard' id lists")
        return cls(easy=list(data["easy"]), hard=list(data["hard"]), version=int(data.get("version", 1)))

    def save(self, path: str | Path):
        Path(path).write_text(
            json.dumps({"version": self.version, "easy": self.easy, "hard": self.hard}, indent=2)
        )


def write_sample(split_dir: str | Path, sample_id: str, rgb_u8: np.ndarray,
                 aux_u16: np.ndarray, label_u8: np.ndarray):
    """Write one sample in the canonical lossless layout."""
    split_dir = Path(split_dir)
    for sub in MODALITY_DIRS:
        (split_dir / sub).mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb_u8, mode="RGB").save(split_dir / "rgb" / f"{sample_id}.png")
    Image.fromarray(aux_u16).save(split_dir / "aux" / f"{sample_id}.png")
    Image.fromarray(label_u8, mode="L").save(split_dir / "label" / f"{sample_id}.png")


def load_aux_raster(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.array(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.uint16 or (arr.dtype == np.int32 and img.mode.startswith("I")):
        return (arr.astype(np.float32) / 65535.0)[..., None]
    return (arr.astype(np.float32) / 255.0)[..., None]


class SegmentationFolder:
    """Ordered, validated view of one split; pixels load lazily, ids eagerly."""

    def __init__(self, root: str | Path, split: str):
        self.root = Path(root)
        self.split = split
        self.split_dir = self.root / split
        rgb_dir = self.split_dir / "rgb"
        if not rgb_dir.is_dir():
            self.ids: list[str] = []
        else:
            self.ids = sorted(p.stem for p in rgb_dir.glob("*.png"))
        for sample_id in self.ids:
            for sub in ("aux", "label"):
                if not (self.split_dir / sub / f"{sample_id}.png").is_file():
                    raise DataError(f"sample {sample_id!r}: missing {sub} file in split {split!r}")
        cond_path = self.split_dir / "conditions.json"
        self.conditions: dict[str, str] = {}
        if cond_path.is_file():
            self.conditions = json.loads(cond_path.read_text())

    def __len__(self) -> int:
        return len(self.ids)

    def load(self, sample_id: str) -> SampleRecord:
        if sample_id not in set(self.ids):
            raise DataError(f"sample {sample_id!r} not present in split {self.split!r}")
        rgb = np.array(Image.open(self.split_dir / "rgb" / f"{sample_id}.png").convert("RGB"))
        rgb = rgb.astype(np.float32) / 255.0
        aux = load_aux_raster(self.split_dir / "aux" / f"{sample_id}.png")
        label = np.array(Image.open(self.split_dir / "label" / f"{sample_id}.png")).astype(np.int64)
        if label.ndim == 3:
            label = label[..., 0]
        if rgb.shape[:2] != aux.shape[:2] or rgb.shape[:2] != label.shape[:2]:
            raise DataError(
                f"sample {sample_id!r}: misaligned rasters rgb={rgb.shape[:2]} "
                f"aux={aux.shape[:2]} label={label.shape[:2]}"
            )
        return SampleRecord(
            id=sample_id, rgb=rgb, aux=aux, label=label, condition=self.conditions.get(sample_id)
        )

    def __getitem__(self, index: int) -> SampleRecord:
        return self.load(self.ids[index])

    def __iter__(self):
        for sample_id in self.ids:
            yield self.load(sample_id)


def load_dataset(root: str | Path, split_name: str) -> SegmentationFolder:
    return SegmentationFolder(root, split_name)


@dataclass
class Normalizer:
    """Per-channel standardization applied after augmentation.

    RGB stats come from the training split; auxiliary rasters are already
    min-max scaled to [0, 1] at load time and are standardized the same way.
    """

    rgb_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    rgb_std: tuple[float, float, float] = (0.25, 0.25, 0.25)
    aux_mean: float = 0.5
    aux_std: float = 0.25

    @classmethod
    def from_dataset(cls, dataset: SegmentationFolder, max_samples: int = 256) -> "Normalizer":
        ids = dataset.ids[:max_samples]
        if not ids:
            return cls()
        rgb_acc, rgb_sq, aux_acc, aux_sq, count = np.zeros(3), np.zeros(3), 0.0, 0.0, 0
        for sample_id in ids:
            rec = dataset.load(sample_id)
            rgb_acc += rec.rgb.reshape(-1, 3).sum(axis=0)
            rgb_sq += (rec.rgb.reshape(-1, 3) ** 2).sum(axis=0)
            aux_acc += float(rec.aux.sum())
            aux_sq += float((rec.aux ** 2).sum())
            count += rec.rgb.shape[0] * rec.rgb.shape[1]
        rgb_mean = rgb_acc / count
        rgb_std = np.sqrt(np.maximum(rgb_sq / count - rgb_mean ** 2, 1e-8))
        aux_mean = aux_acc / count
        aux_std = float(np.sqrt(max(aux_sq / count - aux_mean ** 2, 1e-8)))
        return cls(
            rgb_mean=tuple(float(v) for v in rgb_mean),
            rgb_std=tuple(float(v) for v in rgb_std),
            aux_mean=float(aux_mean),
            aux_std=aux_std,
        )

    def apply(self, rgb: np.ndarray, aux: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rgb = (rgb - np.asarray(self.rgb_mean, dtype=np.float32)) / np.asarray(
            self.rgb_std, dtype=np.float32
        )
        aux = (aux - self.aux_mean) / self.aux_std
        return rgb.astype(np.float32), aux.astype(np.float32)

    def to_dict(self) -> dict:
        return {
            "rgb_mean": list(self.rgb_mean),
            "rgb_std": list(self.rgb_std),
            "aux_mean": self.aux_mean,
            "aux_std": self.aux_std,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(
            rgb_mean=tuple(data["rgb_mean"]),
            rgb_std=tuple(data["rgb_std"]),
            aux_mean=float(data["aux_mean"]),
            aux_std=float(data["aux_std"]),
        )
