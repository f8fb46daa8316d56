"""Injector/extractor side network interleaved with the backbone block groups.

An injector adds multimodal context into the backbone tokens through a
zero-initialized per-channel gate, so at initialization the backbone path is
untouched. An extractor pulls backbone knowledge back into the multimodal
token stream and refines it with a convolutional FFN.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import AdapterConfig
from .msda import MultiScaleDeformableAttention
from .tokens import TokenMatrix, grid_reference_points


class TokenConvFFN(nn.Module):
    """Linear -> per-scale depthwise 3x3 -> GELU -> linear over scale-major tokens."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, kernel_size=3, padding=1, groups=hidden)
        self.act = nn.GELU()
        self.lin2 = nn.Linear(hidden, dim)

    def forward(self, tokens: Tensor, scale_shapes: tuple[tuple[int, int], ...]) -> Tensor:
        x = self.lin1(tokens)
        B, _, C = x.shape
        pieces, start = [], 0
        for h, w in scale_shapes:
            rows = x[:, start : start + h * w, :]
            m = rows.transpose(1, 2).reshape(B, C, h, w)
            pieces.append(self.dwconv(m).flatten(2).transpose(1, 2))
            start += h * w
        x = torch.cat(pieces, dim=1)
        return self.lin2(self.act(x))


class Injector(nn.Module):
    """Adds deformable cross-attention over the multimodal tokens into the backbone tokens.

    output = tokens + gamma * attn(norm(tokens), norm(mm_tokens)); gamma is a
    per-channel vector initialized so the backbone path is exactly preserved.
    """

    def __init__(self, dim: int, num_heads: int, num_points: int, num_kv_levels: int,
                 gamma_init: float = 0.0):
        super().__init__()
        self.norm_query = nn.LayerNorm(dim, eps=1e-6)
        self.norm_value = nn.LayerNorm(dim, eps=1e-6)
        self.attn = MultiScaleDeformableAttention(dim, num_heads, num_kv_levels, num_points)
        self.gamma = nn.Parameter(torch.full((dim,), float(gamma_init)))

    def forward(self, sam_tokens: TokenMatrix, mm_tokens: TokenMatrix) -> TokenMatrix:
        if sam_tokens.dim != mm_tokens.dim:
            raise ValueError(f"token widths differ: {sam_tokens.dim} vs {mm_tokens.dim}")
        if sam_tokens.num_scales != 1:
            raise ValueError("backbone tokens must be single-scale")
        refs = grid_reference_points(
            sam_tokens.scale_shapes, sam_tokens.data.device, sam_tokens.data.dtype
        )
        refs = refs[None, :, None, :].expand(
            sam_tokens.data.shape[0], -1, mm_tokens.num_scales, -1
        )
        out = self.attn(
            self.norm_query(sam_tokens.data),
            self.norm_value(mm_tokens.data),
            refs,
            mm_tokens.scale_shapes,
        )
        return sam_tokens.with_data(sam_tokens.data + self.gamma * out)


class Extractor(nn.Module):
    """Pulls backbone tokens into the multimodal stream, then applies a conv FFN.

    hat = mm + attn(norm(mm), norm(sam)); output = hat + ffn(norm(hat)).
    """

    def __init__(self, dim: int, num_heads: int, num_points: int, ffn_ratio: float):
        super().__init__()
        self.norm_query = nn.LayerNorm(dim, eps=1e-6)
        self.norm_value = nn.LayerNorm(dim, eps=1e-6)
        self.attn = MultiScaleDeformableAttention(dim, num_heads, num_levels=1, num_points=num_points)
        self.norm_ffn = nn.LayerNorm(dim, eps=1e-6)
        self.ffn = TokenConvFFN(dim, max(1, int(dim * ffn_ratio)))

    def forward(self, mm_tokens: TokenMatrix, sam_tokens: TokenMatrix) -> TokenMatrix:
        if mm_tokens.dim != sam_tokens.dim:
            raise ValueError(f"token widths differ: {mm_tokens.dim} vs {sam_tokens.dim}")
        refs = grid_reference_points(
            mm_tokens.scale_shapes, mm_tokens.data.device, mm_tokens.data.dtype
        )
        refs = refs[None, :, None, :].expand(mm_tokens.data.shape[0], -1, 1, -1)
        hat = mm_tokens.data + self.attn(
            self.norm_query(mm_tokens.data),
            self.norm_value(sam_tokens.data),
            refs,
            sam_tokens.scale_shapes,
        )
        out = hat + self.ffn(self.norm_ffn(hat), mm_tokens.scale_shapes)
        return mm_tokens.with_data(out)


class AdapterStack(nn.Module):
    """num_pairs injector/extractor pairs sharing one configuration."""

    def __init__(self, dim: int, cfg: AdapterConfig, num_kv_levels: int = 3):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.injectors = nn.ModuleList(
            Injector(dim, cfg.msda_heads, cfg.msda_points, num_kv_levels, cfg.gamma_init)
            for _ in range(cfg.num_pairs)
        )
        self.extractors = nn.ModuleList(
            Extractor(dim, cfg.msda_heads, cfg.msda_points, cfg.ffn_ratio)
            for _ in range(cfg.num_pairs)
        )
