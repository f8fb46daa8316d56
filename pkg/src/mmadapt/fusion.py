"""Multimodal fusion: modality-specific pyramids combined by an interchangeable fusion module.

Three fusion kinds share one output contract (a 4-level pyramid the projector
maps to the token width): elementwise addition, channel concatenation with a
1x1 reduction, and the full global/local enhancement block with cross-modal
recalibration and coordinate attention.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import FusionConfig
from .encoders import PyramidEncoder, replicate_channels
from .tokens import FeaturePyramid, TokenMatrix


def fuse_add(pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
    """Elementwise sum per level; channels unchanged."""
    for a, b in zip(pyr_rgb.maps, pyr_x.maps):
        if a.shape != b.shape:
            raise ValueError(f"level shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return FeaturePyramid(tuple(a + b for a, b in zip(pyr_rgb.maps, pyr_x.maps)))


def fuse_concat(pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
    """Channel concatenation per level (RGB first); output channels are the sum of inputs."""
    for a, b in zip(pyr_rgb.maps, pyr_x.maps):
        if a.shape[-2:] != b.shape[-2:]:
            raise ValueError(f"level spatial dims differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return FeaturePyramid(tuple(torch.cat([a, b], dim=1) for a, b in zip(pyr_rgb.maps, pyr_x.maps)))


class CrossAttention(nn.Module):
    """Standard multi-head attention with separate query and key/value inputs."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query: Tensor, kv: Tensor) -> Tensor:
        B, Tq, D = query.shape
        Tk = kv.shape[1]
        q = self.q_proj(query).view(B, Tq, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(kv).view(B, Tk, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(kv).view(B, Tk, self.num_heads, self.head_dim).transpose(1, 2)
        attn = ((q * self.scale) @ k.transpose(-2, -1)).softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.out_proj(out)


class GlobalFeatureEnhancer(nn.Module):
    """Per-level 1x1 embedding, residual self-attention, layer norm; shapes preserved."""

    def __init__(self, channels: tuple[int, ...], num_heads: int):
        super().__init__()
        self.embeds = nn.ModuleList(nn.Conv2d(c, c, kernel_size=1) for c in channels)
        self.attns = nn.ModuleList(CrossAttention(c, num_heads) for c in channels)
        self.norms = nn.ModuleList(nn.LayerNorm(c, eps=1e-6) for c in channels)

    def forward_level(self, x: Tensor, level: int) -> Tensor:
        B, C, h, w = x.shape
        tokens = self.embeds[level](x).flatten(2).transpose(1, 2)
        tokens = tokens + self.attns[level](tokens, tokens)
        tokens = self.norms[level](tokens)
        return tokens.transpose(1, 2).reshape(B, C, h, w)

    def forward(self, pyr: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(tuple(self.forward_level(m, i) for i, m in enumerate(pyr.maps)))


class LocalFeatureEnhancer(nn.Module):
    """Per-level conv stack: 1x1, ReLU, depthwise 3x3, ReLU, 1x1; shapes preserved."""

    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.stacks = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(c, c, kernel_size=1),
                nn.ReLU(),
                nn.Conv2d(c, c, kernel_size=3, padding=1, groups=c),
                nn.ReLU(),
                nn.Conv2d(c, c, kernel_size=1),
            )
            for c in channels
        )

    def forward(self, pyr: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(tuple(stack(m) for stack, m in zip(self.stacks, pyr.maps)))


class GlobalRecalibration(nn.Module):
    """Bidirectional cross-attention, concat, layer norm, pooled sigmoid channel gate.

    Output has twice the per-level input channels; gate values are strictly in (0, 1).
    """

    def __init__(self, channels: tuple[int, ...], num_heads: int):
        super().__init__()
        self.rgb_to_x = nn.ModuleList(CrossAttention(c, num_heads) for c in channels)
        self.x_to_rgb = nn.ModuleList(CrossAttention(c, num_heads) for c in channels)
        self.norms = nn.ModuleList(nn.LayerNorm(2 * c, eps=1e-6) for c in channels)

    def forward_level(self, rgb: Tensor, x: Tensor, level: int) -> Tensor:
        if rgb.shape != x.shape:
            raise ValueError(f"level shapes differ: {tuple(rgb.shape)} vs {tuple(x.shape)}")
        B, C, h, w = rgb.shape
        t_rgb = rgb.flatten(2).transpose(1, 2)
        t_x = x.flatten(2).transpose(1, 2)
        fused = torch.cat(
            [self.rgb_to_x[level](t_rgb, t_x), self.x_to_rgb[level](t_x, t_rgb)], dim=-1
        )
        fused = self.norms[level](fused)
        gate = torch.sigmoid(fused.mean(dim=1, keepdim=True))
        fused = fused * gate
        return fused.transpose(1, 2).reshape(B, 2 * C, h, w)

    def forward(self, g_rgb: FeaturePyramid, g_x: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(
            tuple(self.forward_level(a, b, i) for i, (a, b) in enumerate(zip(g_rgb.maps, g_x.maps)))
        )


class LocalFusion(nn.Module):
    """Concat then 1x1, depthwise 3x3, GELU, 1x1 at doubled width."""

    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.stacks = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(2 * c, 2 * c, kernel_size=1),
                nn.Conv2d(2 * c, 2 * c, kernel_size=3, padding=1, groups=2 * c),
                nn.GELU(),
                nn.Conv2d(2 * c, 2 * c, kernel_size=1),
            )
            for c in channels
        )

    def forward_level(self, rgb: Tensor, x: Tensor, level: int) -> Tensor:
        if rgb.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"level spatial dims differ: {tuple(rgb.shape)} vs {tuple(x.shape)}")
        return self.stacks[level](torch.cat([rgb, x], dim=1))

    def forward(self, l_rgb: FeaturePyramid, l_x: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(
            tuple(self.forward_level(a, b, i) for i, (a, b) in enumerate(zip(l_rgb.maps, l_x.maps)))
        )


class CoordinateAttention(nn.Module):
    """Height/width pooled attention producing multiplicative sigmoid gates."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        mid = max(4, channels // reduction)
        self.conv1 = nn.Conv2d(channels, mid, kernel_size=1)
        self.act = nn.ReLU()
        self.conv_h = nn.Conv2d(mid, channels, kernel_size=1)
        self.conv_w = nn.Conv2d(mid, channels, kernel_size=1)

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _, _, h, w = x.shape
        pooled_h = x.mean(dim=3, keepdim=True)                      # (B, C, h, 1)
        pooled_w = x.mean(dim=2, keepdim=True).permute(0, 1, 3, 2)  # (B, C, w, 1)
        y = self.act(self.conv1(torch.cat([pooled_h, pooled_w], dim=2)))
        y_h, y_w = torch.split(y, [h, w], dim=2)
        gate_h = torch.sigmoid(self.conv_h(y_h))
        gate_w = torch.sigmoid(self.conv_w(y_w.permute(0, 1, 3, 2)))
        return gate_h, gate_w

    def forward(self, x: Tensor) -> Tensor:
        gate_h, gate_w = self.gates(x)
        return x * gate_h * gate_w


class EnhanceIntegrate(nn.Module):
    """Learnable-weighted branch sum, coordinate attention, 1x1 refinement."""

    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.branch_weights = nn.ParameterList(
            nn.Parameter(torch.full((2,), 0.5)) for _ in channels
        )
        self.coord = nn.ModuleList(CoordinateAttention(2 * c) for c in channels)
        self.refine = nn.ModuleList(nn.Conv2d(2 * c, 2 * c, kernel_size=1) for c in channels)

    def forward_level(self, g: Tensor, l: Tensor, level: int) -> Tensor:
        if g.shape != l.shape:
            raise ValueError(f"branch shapes differ: {tuple(g.shape)} vs {tuple(l.shape)}")
        w = self.branch_weights[level]
        x = w[0] * g + w[1] * l
        return self.refine[level](self.coord[level](x))

    def forward(self, g_mm: FeaturePyramid, l_mm: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(
            tuple(self.forward_level(a, b, i) for i, (a, b) in enumerate(zip(g_mm.maps, l_mm.maps)))
        )


class RoadFusion(nn.Module):
    """Global/local enhancement per modality, cross-modal fusion, integration.

    Dataflow per level: GFE/LFE on each modality, global recalibration and
    local fusion across modalities (both doubling the width), then the
    weighted integration. Output channels are 2 * D_i.
    """

    def __init__(self, channels: tuple[int, ...], num_heads: int):
        super().__init__()
        self.gfe = nn.ModuleDict(
            {"rgb": GlobalFeatureEnhancer(channels, num_heads), "aux": GlobalFeatureEnhancer(channels, num_heads)}
        )
        self.lfe = nn.ModuleDict(
            {"rgb": LocalFeatureEnhancer(channels), "aux": LocalFeatureEnhancer(channels)}
        )
        self.recalibrate = GlobalRecalibration(channels, num_heads)
        self.local_fuse = LocalFusion(channels)
        self.integrate = EnhanceIntegrate(channels)

    def global_enhance(self, pyr: FeaturePyramid, enhancer_id: str) -> FeaturePyramid:
        return self.gfe[enhancer_id](pyr)

    def local_enhance(self, pyr: FeaturePyramid, enhancer_id: str) -> FeaturePyramid:
        return self.lfe[enhancer_id](pyr)

    def forward(self, pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
        g_mm = self.recalibrate(self.global_enhance(pyr_rgb, "rgb"), self.global_enhance(pyr_x, "aux"))
        l_mm = self.local_fuse(self.local_enhance(pyr_rgb, "rgb"), self.local_enhance(pyr_x, "aux"))
        return self.integrate(g_mm, l_mm)


class ConcatFusion(nn.Module):
    """Concatenation followed by a per-level 1x1 reduction back to the encoder widths."""

    def __init__(self, channels: tuple[int, ...]):
        super().__init__()
        self.reduce = nn.ModuleList(nn.Conv2d(2 * c, c, kernel_size=1) for c in channels)

    def forward(self, pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
        cat = fuse_concat(pyr_rgb, pyr_x)
        return FeaturePyramid(tuple(conv(m) for conv, m in zip(self.reduce, cat.maps)))


class AddFusion(nn.Module):
    def forward(self, pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
        return fuse_add(pyr_rgb, pyr_x)


class MultimodalFusionEncoder(nn.Module):
    """Modality encoders + fusion + projection to the backbone token width.

    ``forward`` returns the stride-4 projected map (kept spatial for the head)
    and the stride-8/16/32 levels flattened into one scale-major token matrix.
    """

    def __init__(self, cfg: FusionConfig, encoder_depths: tuple[int, int, int, int] | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        depths = encoder_depths or cfg.encoder_depths
        self.rgb_encoder = PyramidEncoder(cfg.encoder_channels, depths)
        if not cfg.use_aux:
            self.aux_encoder = None
            self.fusion = None
            fused_channels = cfg.encoder_channels
        else:
            if cfg.encoder_mode == "modality_agnostic":
                self.aux_encoder = self.rgb_encoder
            else:
                self.aux_encoder = PyramidEncoder(cfg.encoder_channels, depths)
            if cfg.kind == "addition":
                self.fusion = AddFusion()
                fused_channels = cfg.encoder_channels
            elif cfg.kind == "concatenation":
                self.fusion = ConcatFusion(cfg.encoder_channels)
                fused_channels = cfg.encoder_channels
            else:
                self.fusion = RoadFusion(cfg.encoder_channels, cfg.attn_heads)
                fused_channels = tuple(2 * c for c in cfg.encoder_channels)
        self.fused_channels = tuple(fused_channels)
        self.projectors = nn.ModuleList(
            nn.Conv2d(c, cfg.target_dim, kernel_size=1) for c in fused_channels
        )

    def encode_pyramid(self, image: Tensor, encoder_id: str) -> FeaturePyramid:
        if encoder_id == "rgb":
            return self.rgb_encoder(image)
        if encoder_id == "aux":
            if self.aux_encoder is None:
                raise ValueError("auxiliary branch is disabled in this configuration")
            return self.aux_encoder(replicate_channels(image))
        raise ValueError(f"unknown encoder id {encoder_id!r}")

    def fuse(self, pyr_rgb: FeaturePyramid, pyr_x: FeaturePyramid) -> FeaturePyramid:
        return self.fusion(pyr_rgb, pyr_x)

    def project_and_stack(self, pyr_mm: FeaturePyramid) -> tuple[Tensor, TokenMatrix]:
        """Project each level to the token width; flatten and stack levels 2-4."""
        projected = [proj(m) for proj, m in zip(self.projectors, pyr_mm.maps)]
        return projected[0], TokenMatrix.from_maps(projected[1:])

    def forward(self, rgb: Tensor, aux: Tensor | None) -> tuple[Tensor, TokenMatrix]:
        pyr_rgb = self.encode_pyramid(rgb, "rgb")
        if not self.cfg.use_aux:
            return self.project_and_stack(pyr_rgb)
        if aux is None:
            raise ValueError("auxiliary input is required when the aux branch is enabled")
        pyr_x = self.encode_pyramid(aux, "aux")
        return self.project_and_stack(self.fuse(pyr_rgb, pyr_x))
