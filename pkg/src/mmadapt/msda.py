"""Multi-scale deformable cross-attention.

Each query predicts per-head sampling offsets around its reference point on
every value level, bilinearly samples the value features there, and combines
the samples with softmax weights that are also predicted from the query.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn


def deformable_attention_core(
    value: Tensor,
    spatial_shapes: tuple[tuple[int, int], ...],
    sampling_locations: Tensor,
    attention_weights: Tensor,
) -> Tensor:
    """Sample and combine value features.

    Args:
        value: (B, Tv, heads, head_dim) per-head value features, scale-major rows.
        spatial_shapes: (h, w) of each value level.
        sampling_locations: (B, Tq, heads, levels, points, 2) in [0, 1] (x, y).
        attention_weights: (B, Tq, heads, levels, points), softmax-normalized
            per query and head over levels x points.

    Returns:
        (B, Tq, heads * head_dim)
    """
    B, _, heads, head_dim = value.shape
    _, Tq, _, levels, points, _ = sampling_locations.shape
    value_list = value.split([h * w for h, w in spatial_shapes], dim=1)
    # grid_sample expects coords in [-1, 1]; align_corners=False maps
    # loc in [0, 1] to pixel coordinate loc * size - 0.5.
    grids = 2 * sampling_locations - 1
    sampled = []
    for level, (h, w) in enumerate(spatial_shapes):
        v = value_list[level].flatten(2).transpose(1, 2).reshape(B * heads, head_dim, h, w)
        g = grids[:, :, :, level].transpose(1, 2).flatten(0, 1)  # (B*heads, Tq, points, 2)
        sampled.append(
            F.grid_sample(v, g, mode="bilinear", padding_mode="zeros", align_corners=False)
        )
    weights = attention_weights.transpose(1, 2).reshape(B * heads, 1, Tq, levels * points)
    out = (torch.stack(sampled, dim=-2).flatten(-2) * weights).sum(-1)
    return out.view(B, heads * head_dim, Tq).transpose(1, 2).contiguous()


class MultiScaleDeformableAttention(nn.Module):
    """Deformable cross-attention from a query token set onto a multi-level value set."""

    def __init__(self, dim: int, num_heads: int, num_levels: int, num_points: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.num_levels = num_levels
        self.num_points = num_points
        self.sampling_offsets = nn.Linear(dim, num_heads * num_levels * num_points * 2)
        self.attention_weights = nn.Linear(dim, num_heads * num_levels * num_points)
        self.value_proj = nn.Linear(dim, dim)
        self.output_proj = nn.Linear(dim, dim)
        self._reset_parameters()

    def _reset_parameters(self):
        # Offsets start at a small per-head radial pattern; weights start uniform.
        nn.init.constant_(self.sampling_offsets.weight, 0.0)
        thetas = torch.arange(self.num_heads, dtype=torch.float32) * (2.0 * math.pi / self.num_heads)
        grid = torch.stack([thetas.cos(), thetas.sin()], dim=-1)
        grid = (grid / grid.abs().max(-1, keepdim=True)[0]).view(self.num_heads, 1, 1, 2)
        grid = grid.repeat(1, self.num_levels, self.num_points, 1)
        for p in range(self.num_points):
            grid[:, :, p, :] *= p + 1
        with torch.no_grad():
            self.sampling_offsets.bias.copy_(grid.reshape(-1))
        nn.init.constant_(self.attention_weights.weight, 0.0)
        nn.init.constant_(self.attention_weights.bias, 0.0)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.constant_(self.value_proj.bias, 0.0)
        nn.init.xavier_uniform_(self.output_proj.weight)
        nn.init.constant_(self.output_proj.bias, 0.0)

    def _sampling_parameters(self, query: Tensor, reference_points: Tensor,
                             spatial_shapes: tuple[tuple[int, int], ...]) -> tuple[Tensor, Tensor]:
        B, Tq, _ = query.shape
        offsets = self.sampling_offsets(query).view(
            B, Tq, self.num_heads, self.num_levels, self.num_points, 2
        )
        weights = self.attention_weights(query).view(
            B, Tq, self.num_heads, self.num_levels * self.num_points
        )
        weights = weights.softmax(-1).view(B, Tq, self.num_heads, self.num_levels, self.num_points)
        normalizer = torch.tensor(
            [[w, h] for h, w in spatial_shapes], device=query.device, dtype=query.dtype
        )
        locations = (
            reference_points[:, :, None, :, None, :]
            + offsets / normalizer[None, None, None, :, None, :]
        )
        return locations, weights

    def forward(
        self,
        query: Tensor,
        value: Tensor,
        reference_points: Tensor,
        spatial_shapes: tuple[tuple[int, int], ...],
    ) -> Tensor:
        """Attend from each query onto the multi-level value set.

        Args:
            query: (B, Tq, D).
            value: (B, Tv, D) with rows laid out per ``spatial_shapes``.
            reference_points: (B, Tq, levels, 2) normalized (x, y) in [0, 1].
            spatial_shapes: per-level (h, w) of the value rows.
        """
        if not spatial_shapes:
            raise ValueError("value scale metadata is required")
        if len(spatial_shapes) != self.num_levels:
            raise ValueError(f"expected {self.num_levels} value levels, got {len(spatial_shapes)}")
        if sum(h * w for h, w in spatial_shapes) != value.shape[1]:
            raise ValueError("value rows do not match the declared spatial shapes")
        if reference_points.shape[-2:] != (self.num_levels, 2):
            raise ValueError(
                f"reference points must be (B, Tq, {self.num_levels}, 2), got "
                f"{tuple(reference_points.shape)}"
            )
        if reference_points.min() < 0 or reference_points.max() > 1:
            raise ValueError("reference points must lie in [0, 1]^2")
        B, Tv, _ = value.shape
        v = self.value_proj(value).view(B, Tv, self.num_heads, self.dim // self.num_heads)
        locations, weights = self._sampling_parameters(query, reference_points, spatial_shapes)
        out = deformable_attention_core(v, spatial_shapes, locations, weights)
        return self.output_proj(out)
