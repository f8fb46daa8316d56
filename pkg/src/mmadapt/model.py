"""Full model assembly: backbone trunk, fusion encoder, adapter pairs, segmentation head."""

from __future__ import annotations

import logging

import torch
from torch import Tensor, nn

from .adapter import AdapterStack
from .backbone import ViTBackbone, load_pretrained
from .config import ModelConfig
from .fusion import MultimodalFusionEncoder
from .head import SegmentationHead
from .tokens import TokenMatrix

log = logging.getLogger(__name__)


class MultimodalSegmenter(nn.Module):
    """Backbone tokens steered by fused multimodal features via injector/extractor pairs.

    Pipeline: the fusion encoder produces a stride-4 map and stacked
    stride-8/16/32 tokens; the backbone embeds the RGB image; for each block
    group the multimodal tokens are injected, the group runs, and the
    extractor pulls the group output back into the multimodal stream.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = ViTBackbone(cfg.backbone)
        self.fusion = MultimodalFusionEncoder(cfg.fusion)
        self.adapter = AdapterStack(cfg.backbone.embed_dim, cfg.adapter, num_kv_levels=3)
        self.head = SegmentationHead(cfg.backbone.embed_dim, cfg.head)
        if cfg.backbone.pretrained:
            report = load_pretrained(cfg.backbone.pretrained, self.backbone, allow_pos_resize=True)
            log.info("loaded %d backbone arrays (%d resized)", len(report.matched), len(report.resized))
        if not cfg.backbone.finetune:
            self.backbone.requires_grad_(False)
        counts = self.parameter_counts()
        if counts["fusion"] + counts["adapter"] >= counts["backbone"]:
            log.warning(
                "side network (%d params) is not lighter than the backbone (%d params); "
                "the asymmetric design is intentional for the default configuration",
                counts["fusion"] + counts["adapter"],
                counts["backbone"],
            )

    def parameter_counts(self) -> dict[str, int]:
        return {
            name: sum(p.numel() for p in module.parameters())
            for name, module in (
                ("backbone", self.backbone),
                ("fusion", self.fusion),
                ("adapter", self.adapter),
                ("head", self.head),
            )
        }

    def encode(self, rgb: Tensor, aux: Tensor | None) -> tuple[TokenMatrix, TokenMatrix, Tensor]:
        """Run the interleaved trunk/side pipeline.

        Returns the final multimodal tokens, the final backbone tokens, and
        the stride-4 fused map kept for the head.
        """
        f1_mm, mm = self.fusion(rgb, aux)
        sam = self.backbone.embed(rgb)
        for i in range(self.cfg.backbone.num_groups):
            sam = self.adapter.injectors[i](sam, mm)
            sam = self.backbone.run_block_group(sam, i)
            mm = self.adapter.extractors[i](mm, sam)
        return mm, sam, f1_mm

    def forward(self, rgb: Tensor, aux: Tensor | None) -> Tensor:
        mm, sam, f1_mm = self.encode(rgb, aux)
        return self.head(f1_mm, mm, sam, rgb.shape[-2:])


def build_model(cfg: ModelConfig) -> MultimodalSegmenter:
    return MultimodalSegmenter(cfg)


def count_parameters_symbolically(cfg: ModelConfig) -> dict[str, int]:
    """Parameter counts for a configuration without allocating weight memory."""
    pretrained = cfg.backbone.pretrained
    cfg.backbone.pretrained = None
    try:
        with torch.device("meta"):
            model = MultimodalSegmenter(cfg)
        return model.parameter_counts()
    finally:
        cfg.backbone.pretrained = pretrained
