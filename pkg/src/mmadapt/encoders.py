"""Hierarchical 4-stage convolutional encoder producing a stride-4/8/16/32 pyramid."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .tokens import FeaturePyramid


class LayerNorm2d(nn.Module):
    """Channel-wise LayerNorm for (B, C, H, W) tensors."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ConvStageBlock(nn.Module):
    """Depthwise 7x7 + pointwise inverted bottleneck with layer scale, residual."""

    def __init__(self, dim: int, layer_scale_init: float = 1e-6):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = LayerNorm2d(dim)
        self.pwconv1 = nn.Conv2d(dim, 4 * dim, kernel_size=1)
        self.act = nn.GELU()
        self.pwconv2 = nn.Conv2d(4 * dim, dim, kernel_size=1)
        self.gamma = nn.Parameter(layer_scale_init * torch.ones(dim))

    def forward(self, x: Tensor) -> Tensor:
        residual = x
        x = self.dwconv(x)
        x = self.norm(x)
        x = self.pwconv2(self.act(self.pwconv1(x)))
        return residual + self.gamma[:, None, None] * x


class PyramidEncoder(nn.Module):
    """Stem (stride 4) plus three stride-2 downsamples; emits one map per stage."""

    def __init__(self, channels: tuple[int, int, int, int], depths: tuple[int, int, int, int]):
        super().__init__()
        self.channels = tuple(channels)
        self.downsamples = nn.ModuleList()
        self.downsamples.append(
            nn.Sequential(nn.Conv2d(3, channels[0], kernel_size=4, stride=4), LayerNorm2d(channels[0]))
        )
        for i in range(3):
            self.downsamples.append(
                nn.Sequential(
                    LayerNorm2d(channels[i]),
                    nn.Conv2d(channels[i], channels[i + 1], kernel_size=2, stride=2),
                )
            )
        self.stages = nn.ModuleList(
            nn.Sequential(*[ConvStageBlock(channels[i]) for _ in range(depths[i])])
            for i in range(4)
        )

    def forward(self, x: Tensor) -> FeaturePyramid:
        if x.shape[-2] % 32 != 0 or x.shape[-1] % 32 != 0:
            raise ValueError(f"input spatial dims must be divisible by 32, got {tuple(x.shape[-2:])}")
        maps = []
        for down, stage in zip(self.downsamples, self.stages):
            x = stage(down(x))
            maps.append(x)
        return FeaturePyramid(tuple(maps))


def replicate_channels(aux: Tensor) -> Tensor:
    """Expand a single-channel raster to three identical channels; 3-channel input passes through."""
    if aux.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got {tuple(aux.shape)}")
    if aux.shape[1] == 3:
        return aux
    if aux.shape[1] != 1:
        raise ValueError(f"auxiliary raster must have 1 or 3 channels, got {aux.shape[1]}")
    return aux.expand(-1, 3, -1, -1)
