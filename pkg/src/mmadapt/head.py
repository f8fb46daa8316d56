"""Feature refinement and the all-MLP segmentation decoder.

The adapter's multi-scale tokens are reshaped back to maps, mixed with the
stride-4 fused map (via a 2x transpose conv) and the final backbone tokens
(bilinearly resized per scale), then decoded SegFormer-style: per-scale 1x1
conv + BN + ReLU to a common width, upsample to stride 4, concat, fuse, classify.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import HeadConfig
from .tokens import TokenMatrix


def refine_tokens(mm_tokens: TokenMatrix) -> list[Tensor]:
    """Reshape each scale's token rows to its (B, D, h, w) map."""
    return mm_tokens.to_maps()


class SegmentationHead(nn.Module):
    def __init__(self, dim: int, cfg: HeadConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.upsample2 = nn.ConvTranspose2d(dim, dim, kernel_size=2, stride=2)
        self.mlps = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(dim, cfg.decoder_dim, kernel_size=1),
                nn.BatchNorm2d(cfg.decoder_dim),
                nn.ReLU(),
            )
            for _ in range(4)
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(4 * cfg.decoder_dim, cfg.decoder_dim, kernel_size=1),
            nn.BatchNorm2d(cfg.decoder_dim),
            nn.ReLU(),
        )
        self.classifier = nn.Conv2d(cfg.decoder_dim, cfg.num_classes, kernel_size=1)

    def preprocess(self, f1_mm: Tensor, maps_8_16_32: list[Tensor], sam_map: Tensor) -> list[Tensor]:
        """Build the four mixed maps at strides 4/8/16/32.

        The stride-4 map is the fused level-1 map plus the 2x-upsampled
        stride-8 map; every map then receives the resized backbone features.
        """
        if f1_mm.shape[1] != sam_map.shape[1]:
            raise ValueError(
                f"channel mismatch: fused map has {f1_mm.shape[1]}, backbone map has {sam_map.shape[1]}"
            )
        stride4 = f1_mm + self.upsample2(maps_8_16_32[0])
        maps = [stride4, *maps_8_16_32]
        mixed = []
        for m in maps:
            resized = F.interpolate(sam_map, size=m.shape[-2:], mode="bilinear", align_corners=False)
            mixed.append(m + resized)
        return mixed

    def decode(self, mixed: list[Tensor], out_hw: tuple[int, int]) -> Tensor:
        """Per-scale MLP, upsample to stride 4, concat, fuse, classify, upsample to full size."""
        target = mixed[0].shape[-2:]
        scaled = []
        for mlp, m in zip(self.mlps, mixed):
            y = mlp(m)
            if y.shape[-2:] != target:
                y = F.interpolate(y, size=target, mode="bilinear", align_corners=False)
            scaled.append(y)
        fused = self.fuse(torch.cat(scaled, dim=1))
        logits = self.classifier(fused)
        return F.interpolate(logits, size=out_hw, mode="bilinear", align_corners=False)

    def forward(self, f1_mm: Tensor, mm_tokens: TokenMatrix, sam_tokens: TokenMatrix,
                out_hw: tuple[int, int]) -> Tensor:
        maps = refine_tokens(mm_tokens)
        sam_map = sam_tokens.to_maps()[0]
        mixed = self.preprocess(f1_mm, maps, sam_map)
        return self.decode(mixed, out_hw)
