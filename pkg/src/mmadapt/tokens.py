"""Token and pyramid containers passed between the backbone, fusion encoder and adapter."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor


@dataclass
class TokenMatrix:
    """A (B, T, D) token tensor plus the spatial layout of its constituent scales.

    Tokens are stored scale-major, row-major within each scale: the rows for
    scale ``s`` occupy ``[scale_offsets[s], scale_offsets[s] + h*w)`` and the
    token for cell (y, x) sits at ``offset + y*w + x``.
    """

    data: Tensor
    scale_shapes: tuple[tuple[int, int], ...]
    scale_offsets: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.scale_shapes = tuple((int(h), int(w)) for h, w in self.scale_shapes)
        if not self.scale_offsets:
            offs, acc = [], 0
            for h, w in self.scale_shapes:
                offs.append(acc)
                acc += h * w
            self.scale_offsets = tuple(offs)
        if self.data.ndim != 3:
            raise ValueError(f"token data must be (B, T, D), got shape {tuple(self.data.shape)}")
        total = sum(h * w for h, w in self.scale_shapes)
        if total != self.data.shape[1]:
            raise ValueError(
                f"scale shapes cover {total} tokens but data has {self.data.shape[1]}"
            )
        if self.scale_offsets[0] != 0 or list(self.scale_offsets) != sorted(set(self.scale_offsets)):
            raise ValueError(f"scale offsets must start at 0 and increase: {self.scale_offsets}")

    @property
    def num_tokens(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def num_scales(self) -> int:
        return len(self.scale_shapes)

    def with_data(self, data: Tensor) -> "TokenMatrix":
        """Same layout, new values; shape must be preserved."""
        if data.shape != self.data.shape:
            raise ValueError(f"shape changed {tuple(self.data.shape)} -> {tuple(data.shape)}")
        return TokenMatrix(data, self.scale_shapes, self.scale_offsets)

    def scale_slice(self, index: int) -> Tensor:
        h, w = self.scale_shapes[index]
        start = self.scale_offsets[index]
        return self.data[:, start : start + h * w, :]

    def to_maps(self) -> list[Tensor]:
        """Reshape each scale back to its (B, D, h, w) map."""
        maps = []
        for i, (h, w) in enumerate(self.scale_shapes):
            rows = self.scale_slice(i)
            maps.append(rows.reshape(rows.shape[0], h, w, rows.shape[2]).permute(0, 3, 1, 2))
        return maps

    @classmethod
    def from_maps(cls, maps: list[Tensor]) -> "TokenMatrix":
        """Flatten (B, D, h, w) maps row-major and stack them scale-major."""
        shapes = tuple((m.shape[2], m.shape[3]) for m in maps)
        rows = [m.flatten(2).transpose(1, 2) for m in maps]
        return cls(torch.cat(rows, dim=1), shapes)


@dataclass
class FeaturePyramid:
    """Four feature maps at strides 4/8/16/32, each (B, C_i, H_i, W_i)."""

    maps: tuple[Tensor, ...]

    def __post_init__(self):
        self.maps = tuple(self.maps)
        if len(self.maps) != 4:
            raise ValueError(f"pyramid must have exactly 4 levels, got {len(self.maps)}")
        for i in range(1, 4):
            ph, pw = self.maps[i - 1].shape[-2:]
            h, w = self.maps[i].shape[-2:]
            if (h, w) != (ph // 2, pw // 2):
                raise ValueError(
                    f"level {i + 1} is {h}x{w}, expected half of level {i} ({ph}x{pw})"
                )

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(m.shape[1] for m in self.maps)

    @property
    def spatial_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((m.shape[2], m.shape[3]) for m in self.maps)

    def map_fn(self, fn) -> "FeaturePyramid":
        return FeaturePyramid(tuple(fn(m) for m in self.maps))


def grid_reference_points(
    shapes: tuple[tuple[int, int], ...], device, dtype
) -> Tensor:
    """Normalized (x, y) cell centers for each token of the given scales, stacked scale-major.

    Returns a (sum h*w, 2) tensor with coordinates in (0, 1).
    """
    points = []
    for h, w in shapes:
        ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) / h
        xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) / w
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        points.append(torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1))
    return torch.cat(points, dim=0)
