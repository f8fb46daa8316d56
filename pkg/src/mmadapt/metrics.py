"""Segmentation metrics and split-aware evaluation.

Per-class IoU is computed with exact rational arithmetic over the integer
confusion counts and converted to float only at the boundary, so results are
independent of accumulation order and reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .data import SegmentationFolder, SplitManifest
from .errors import DataError, MetricError


@dataclass
class ConfusionMatrix:
    num_classes: int
    ignore_index: int = 255
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ValueError(f"counts must be ({self.num_classes}, {self.num_classes})")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred: np.ndarray, gt: np.ndarray, sample_id: str | None = None) -> "ConfusionMatrix":
        """Accumulate counts[gt, pred] over non-ignored pixels."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"pred {pred.shape} and gt {gt.shape} disagree")
        mask = gt != self.ignore_index
        p, g = pred[mask].astype(np.int64), gt[mask].astype(np.int64)
        where = f" in sample {sample_id!r}" if sample_id else ""
        if p.size and (p.min() < 0 or p.max() >= self.num_classes):
            raise DataError(f"prediction label out of range [0, {self.num_classes}){where}")
        if g.size and (g.min() < 0 or g.max() >= self.num_classes):
            raise DataError(f"ground-truth label out of range [0, {self.num_classes}){where}")
        np.add.at(self.counts, (g, p), 1)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ValueError("confusion matrices have different class counts")
        return ConfusionMatrix(self.num_classes, self.ignore_index, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray,
               sample_id: str | None = None) -> ConfusionMatrix:
    return cm.update(pred, gt, sample_id)


def miou(cm: ConfusionMatrix) -> tuple[float, list[float]]:
    """Mean and per-class intersection-over-union.

    IoU_c = diag_c / (row_c + col_c - diag_c); classes absent from both
    prediction and ground truth are excluded from the mean and reported as NaN.
    """
    if cm.total == 0:
        raise MetricError("mIoU is undefined for an empty confusion matrix")
    diag = np.diag(cm.counts)
    rows = cm.counts.sum(axis=1)
    cols = cm.counts.sum(axis=0)
    per_class: list[float] = []
    present: list[Fraction] = []
    for c in range(cm.num_classes):
        union = int(rows[c] + cols[c] - diag[c])
        if union == 0:
            per_class.append(float("nan"))
            continue
        value = Fraction(int(diag[c]), union)
        present.append(value)
        per_class.append(float(value))
    if not present:
        raise MetricError("no class is present in prediction or ground truth")
    return float(sum(present) / len(present)), per_class


@dataclass
class SplitReport:
    miou: float
    per_class: list[float]
    num_samples: int
    num_pixels: int

    def to_dict(self) -> dict:
        # Absent classes serialize as null so the report stays strict JSON.
        per_class = [None if np.isnan(v) else v for v in self.per_class]
        return {
            "miou": self.miou,
            "per_class_iou": per_class,
            "num_samples": self.num_samples,
            "num_pixels": self.num_pixels,
        }


def evaluate_split(
    predict: Callable[[object], np.ndarray],
    dataset: SegmentationFolder,
    manifest: SplitManifest | None,
    num_classes: int,
    ignore_index: int = 255,
) -> dict[str, SplitReport]:
    """Evaluate over the whole split plus the easy/hard partitions.

    ``predict`` maps a SampleRecord to a label map. The "all" report covers
    every sample, listed in the manifest or not; easy/hard cover exactly the
    manifest ids, all of which must exist in the dataset.
    """
    ids = set(dataset.ids)
    buckets: dict[str, set[str]] = {}
    if manifest is not None:
        missing = sorted((set(manifest.easy) | set(manifest.hard)) - ids)
        if missing:
            raise DataError(f"manifest ids missing from dataset: {missing[:10]}")
        buckets = {"easy": set(manifest.easy), "hard": set(manifest.hard)}

    cms = {name: ConfusionMatrix(num_classes, ignore_index) for name in ("all", *buckets)}
    counters = {name: 0 for name in cms}
    for sample in dataset:
        pred = predict(sample)
        cms["all"].update(pred, sample.label, sample.id)
        counters["all"] += 1
        for name, members in buckets.items():
            if sample.id in members:
                cms[name].update(pred, sample.label, sample.id)
                counters[name] += 1
    reports = {}
    for name, cm in cms.items():
        if cm.total == 0:
            continue
        mean, per_class = miou(cm)
        reports[name] = SplitReport(mean, per_class, counters[name], cm.total)
    return reports


def per_sample_miou(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                    ignore_index: int = 255) -> float:
    """mIoU over only the classes present in this sample's ground truth."""
    cm = ConfusionMatrix(num_classes, ignore_index).update(pred, gt)
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts)
    cols = cm.counts.sum(axis=0)
    values = []
    for c in range(num_classes):
        if rows[c] == 0:
            continue
        union = int(rows[c] + cols[c] - diag[c])
        values.append(Fraction(int(diag[c]), union))
    if not values:
        raise MetricError("sample has no labeled pixels")
    return float(sum(values) / len(values))


def rank_hard_candidates(
    rgb_only_preds: dict[str, np.ndarray],
    gts: dict[str, np.ndarray],
    num_classes: int,
    ignore_index: int = 255,
) -> list[tuple[str, float]]:
    """Rank samples by RGB-only failure: ascending per-sample mIoU, ties by id.

    Returns (sample_id, deficit) with deficit = 1 - per-sample mIoU; the
    ranking feeds human curation of the hard split, it does not decide it.
    """
    if set(rgb_only_preds) != set(gts):
        raise DataError("prediction and ground-truth id sets differ")
    scored = [
        (sample_id, per_sample_miou(rgb_only_preds[sample_id], gts[sample_id], num_classes, ignore_index))
        for sample_id in gts
    ]
    scored.sort(key=lambda item: (item[1], item[0]))
    return [(sample_id, 1.0 - value) for sample_id, value in scored]
