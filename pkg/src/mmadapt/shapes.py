"""Symbolic shape trace: every intermediate tensor shape derived from config arithmetic.

Shapes are computed without instantiating weights, so full-scale
configurations can be checked on any machine. Spatial entries are
(H, W, C); token entries are (T, D).
"""

from __future__ import annotations

from .config import ModelConfig


def trace_shapes(cfg: ModelConfig, image_size: int | None = None) -> dict[str, tuple[int, ...]]:
    b = cfg.backbone
    f = cfg.fusion
    size = image_size or b.image_size
    if size % 32 != 0:
        raise ValueError(f"image size must be divisible by 32, got {size}")
    D = b.embed_dim
    grid = size // b.patch_size
    trace: dict[str, tuple[int, ...]] = {}
    trace["input.rgb"] = (size, size, 3)
    trace["input.aux"] = (size, size, 3)
    trace["backbone.tokens"] = (grid * grid, D)
    for g in range(b.num_groups):
        trace[f"backbone.group{g + 1}.out"] = (grid * grid, D)

    strides = (4, 8, 16, 32)
    for i, (stride, c) in enumerate(zip(strides, f.encoder_channels), start=1):
        trace[f"encoder.rgb.level{i}"] = (size // stride, size // stride, c)
        if f.use_aux:
            trace[f"encoder.aux.level{i}"] = (size // stride, size // stride, c)
    if f.use_aux:
        if f.kind == "road_fusion":
            for i, (stride, c) in enumerate(zip(strides, f.encoder_channels), start=1):
                s = size // stride
                trace[f"fusion.gfe.level{i}"] = (s, s, c)
                trace[f"fusion.lfe.level{i}"] = (s, s, c)
                trace[f"fusion.recalibrated.level{i}"] = (s, s, 2 * c)
                trace[f"fusion.local.level{i}"] = (s, s, 2 * c)
                trace[f"fusion.integrated.level{i}"] = (s, s, 2 * c)
            fused = tuple(2 * c for c in f.encoder_channels)
        else:
            fused = f.encoder_channels
        for i, (stride, c) in enumerate(zip(strides, fused), start=1):
            trace[f"fusion.level{i}"] = (size // stride, size // stride, c)

    token_counts = [(size // stride) ** 2 for stride in strides]
    for i, stride in enumerate(strides, start=1):
        trace[f"projector.level{i}"] = (token_counts[i - 1], D)
    stacked = sum(token_counts[1:])
    trace["adapter.stacked_tokens"] = (stacked, D)
    trace["adapter.injector.out"] = (grid * grid, D)
    trace["adapter.extractor.out"] = (stacked, D)

    for i, stride in enumerate(strides[1:], start=2):
        trace[f"refine.level{i}"] = (size // stride, size // stride, D)
    for i, stride in enumerate(strides, start=1):
        trace[f"head.mixed.level{i}"] = (size // stride, size // stride, D)
    trace["head.upsampled"] = (size // 4, size // 4, cfg.head.decoder_dim)
    trace["head.logits"] = (size, size, cfg.head.num_classes)
    return trace
