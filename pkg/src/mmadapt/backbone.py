"""Plain ViT image encoder partitioned into sequential block groups.

The encoder follows the large-scale segmentation recipe: 16x16 patch embedding
with a learnable 2-D positional grid, pre-norm transformer blocks with global
self-attention and an MLP ratio of 4. Blocks are grouped so a side network can
interleave with the trunk between groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .archive import load_archive
from .config import BackboneConfig
from .errors import CheckpointError
from .tokens import TokenMatrix


def resize_pos_embed(pos: Tensor, new_grid: tuple[int, int]) -> Tensor:
    """Bicubic resize of a (1, h, w, D) positional grid to (1, h', w', D)."""
    if pos.ndim != 4 or pos.shape[0] != 1:
        raise ValueError(f"positional grid must be (1, h, w, D), got {tuple(pos.shape)}")
    nh, nw = new_grid
    if nh < 1 or nw < 1:
        raise ValueError(f"target grid must be positive, got {new_grid}")
    if (pos.shape[1], pos.shape[2]) == (nh, nw):
        return pos.clone()
    grid = pos.permute(0, 3, 1, 2)
    grid = F.interpolate(grid, size=(nh, nw), mode="bicubic", align_corners=False)
    return grid.permute(0, 2, 3, 1).contiguous()


class Attention(nn.Module):
    """Global multi-head self-attention with optional decomposed relative positions."""

    def __init__(self, dim: int, num_heads: int, use_rel_pos: bool = False,
                 input_size: tuple[int, int] | None = None):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.use_rel_pos = use_rel_pos
        if use_rel_pos:
            if input_size is None:
                raise ValueError("relative positions require the token grid size")
            self.rel_pos_h = nn.Parameter(torch.zeros(2 * input_size[0] - 1, self.head_dim))
            self.rel_pos_w = nn.Parameter(torch.zeros(2 * input_size[1] - 1, self.head_dim))

    def _rel_bias(self, q: Tensor, hw: tuple[int, int]) -> Tensor:
        # Decomposed axial bias: q (B*heads, T, head_dim) -> (B*heads, T, T).
        h, w = hw
        coords_h = torch.arange(h, device=q.device)
        coords_w = torch.arange(w, device=q.device)
        rel_h = self.rel_pos_h[(coords_h[:, None] - coords_h[None, :]) + (h - 1)]
        rel_w = self.rel_pos_w[(coords_w[:, None] - coords_w[None, :]) + (w - 1)]
        q = q.reshape(-1, h, w, self.head_dim)
        bias_h = torch.einsum("bhwc,hkc->bhwk", q, rel_h)
        bias_w = torch.einsum("bhwc,wkc->bhwk", q, rel_w)
        bias = bias_h[:, :, :, :, None] + bias_w[:, :, :, None, :]
        return bias.reshape(-1, h * w, h * w)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        B, T, D = x.shape
        qkv = self.qkv(x).reshape(B, T, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).reshape(3, B * self.num_heads, T, self.head_dim)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        if self.use_rel_pos:
            attn = attn + self._rel_bias(q, hw)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).reshape(B, self.num_heads, T, self.head_dim)
        out = out.permute(0, 2, 1, 3).reshape(B, T, D)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.lin2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(self.act(self.lin1(x)))


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, use_rel_pos: bool,
                 input_size: tuple[int, int]):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads, use_rel_pos, input_size)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        x = x + self.attn(self.norm1(x), hw)
        x = x + self.mlp(self.norm2(x))
        return x


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(x).flatten(2).transpose(1, 2)


@dataclass
class LoadReport:
    matched: list[str]
    unmatched: list[str]
    resized: list[str]


class ViTBackbone(nn.Module):
    """SAM-style plain ViT trunk; forward runs per block group so a side network can interleave."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.grid = (cfg.image_size // cfg.patch_size,) * 2
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid[0], self.grid[1], cfg.embed_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.use_rel_pos, self.grid)
            for _ in range(cfg.depth)
        )
        self.layers_per_group = cfg.depth // cfg.num_groups
        if not cfg.finetune:
            self.requires_grad_(False)

    def embed(self, image: Tensor) -> TokenMatrix:
        """Patch-embed a (B, 3, H, W) image and add the positional grid."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(image.shape)}")
        H, W = image.shape[-2:]
        if H != self.cfg.image_size or W != self.cfg.image_size:
            raise ValueError(
                f"input is {H}x{W} but the backbone is configured for "
                f"{self.cfg.image_size}x{self.cfg.image_size}"
            )
        tokens = self.patch_embed(image)
        tokens = tokens + self.pos_embed.reshape(1, -1, self.cfg.embed_dim)
        return TokenMatrix(tokens, (self.grid,))

    def run_block_group(self, tokens: TokenMatrix, group_index: int) -> TokenMatrix:
        """Apply the group's depth/num_groups consecutive transformer layers."""
        if not 0 <= group_index < self.cfg.num_groups:
            raise ValueError(f"group_index {group_index} out of range [0, {self.cfg.num_groups})")
        if tokens.num_scales != 1:
            raise ValueError("backbone tokens must be single-scale")
        hw = tokens.scale_shapes[0]
        x = tokens.data
        start = group_index * self.layers_per_group
        for block in self.blocks[start : start + self.layers_per_group]:
            x = block(x, hw)
        return tokens.with_data(x)

    def forward(self, image: Tensor) -> TokenMatrix:
        tokens = self.embed(image)
        for i in range(self.cfg.num_groups):
            tokens = self.run_block_group(tokens, i)
        return tokens


def load_pretrained(checkpoint_path, backbone: ViTBackbone, allow_pos_resize: bool = False) -> LoadReport:
    """Populate all backbone parameters from an archive; no partial mutation on failure.

    Archive names may carry a ``backbone.`` prefix. The positional grid is
    bicubically resized when shapes differ and ``allow_pos_resize`` is set;
    any other shape mismatch or missing parameter is an error.
    """
    arrays, _ = load_archive(checkpoint_path)
    arrays = {(k[len("backbone."):] if k.startswith("backbone.") else k): v for k, v in arrays.items()}
    state = backbone.state_dict()
    new_state, matched, resized = {}, [], []
    for name, param in state.items():
        if name not in arrays:
            raise CheckpointError(f"archive is missing required array {name!r}")
        value = torch.from_numpy(np.array(arrays[name]))
        if tuple(value.shape) != tuple(param.shape):
            if name == "pos_embed" and allow_pos_resize and value.ndim == 4:
                value = resize_pos_embed(value, (param.shape[1], param.shape[2]))
                resized.append(name)
            else:
                raise CheckpointError(
                    f"array {name!r} has shape {tuple(value.shape)}, expected {tuple(param.shape)}"
                )
        new_state[name] = value.to(param.dtype)
        matched.append(name)
    unmatched = sorted(set(arrays) - set(state))
    backbone.load_state_dict(new_state)
    return LoadReport(matched=matched, unmatched=unmatched, resized=resized)
