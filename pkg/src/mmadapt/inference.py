"""Model + normalization bundled for sample-level prediction."""

from __future__ import annotations

import numpy as np
import torch

from .data import Normalizer, SampleRecord
from .model import MultimodalSegmenter


class Predictor:
    """Normalizes a sample and returns the argmax label map."""

    def __init__(self, model: MultimodalSegmenter, normalizer: Normalizer, device: str = "cpu"):
        self.model = model.to(device)
        self.normalizer = normalizer
        self.device = device

    @torch.no_grad()
    def __call__(self, sample: SampleRecord) -> np.ndarray:
        self.model.eval()
        rgb, aux = self.normalizer.apply(sample.rgb, sample.aux)
        rgb_t = torch.from_numpy(rgb).permute(2, 0, 1)[None].to(self.device)
        aux_t = torch.from_numpy(aux).permute(2, 0, 1)[None].to(self.device)
        logits = self.model(rgb_t, aux_t)
        return logits.argmax(dim=1)[0].cpu().numpy().astype(np.int64)


def collate(samples: list[SampleRecord], normalizer: Normalizer, device: str = "cpu"):
    """Stack normalized samples into (rgb, aux, label) batch tensors."""
    rgbs, auxs, labels = [], [], []
    for sample in samples:
        rgb, aux = normalizer.apply(sample.rgb, sample.aux)
        rgbs.append(torch.from_numpy(rgb).permute(2, 0, 1))
        auxs.append(torch.from_numpy(aux).permute(2, 0, 1))
        labels.append(torch.from_numpy(sample.label))
    return (
        torch.stack(rgbs).to(device),
        torch.stack(auxs).to(device),
        torch.stack(labels).to(device),
    )
