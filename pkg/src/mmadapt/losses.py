"""Hard-pixel-mined cross-entropy.

Pixels whose predicted true-class probability falls below the threshold are
"hard"; the loss is the mean cross-entropy over the hard pixels, with at
least min_kept highest-loss valid pixels always included. Mining is applied
per image and the per-image means are averaged, so gradient accumulation over
micro-batches reproduces the full-batch update exactly.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor

from .config import OhemConfig


def ohem_cross_entropy(logits: Tensor, labels: Tensor, cfg: OhemConfig, min_kept: int | None = None) -> Tensor:
    """OHEM cross-entropy over a (B, C, H, W) logit tensor and (B, H, W) labels.

    Labels equal to cfg.ignore_index never contribute. If every pixel of the
    batch is ignored the result is an exact zero that still participates in
    the autograd graph (zero gradient).
    """
    if logits.shape[0] != labels.shape[0] or logits.shape[-2:] != labels.shape[-2:]:
        raise ValueError(f"logits {tuple(logits.shape)} and labels {tuple(labels.shape)} disagree")
    kept = cfg.min_kept if min_kept is None else min_kept
    if kept is None or kept < 1:
        raise ValueError("min_kept must be a positive integer (resolve it from the config first)")
    num_classes = logits.shape[1]
    valid = labels != cfg.ignore_index
    if valid.any():
        bad = labels[valid]
        if bad.min() < 0 or bad.max() >= num_classes:
            raise ValueError(f"labels must be in [0, {num_classes}) or ignore_index {cfg.ignore_index}")

    log_thresh = math.log(cfg.prob_threshold)
    log_probs = F.log_softmax(logits, dim=1)
    per_image = []
    for b in range(logits.shape[0]):
        mask = valid[b].reshape(-1)
        if not mask.any():
            per_image.append(logits.sum() * 0.0)
            continue
        target = labels[b].reshape(-1)[mask]
        lp = log_probs[b].permute(1, 2, 0).reshape(-1, num_classes)[mask]
        true_logp = lp.gather(1, target[:, None]).squeeze(1)
        losses = -true_logp
        hard = true_logp < log_thresh
        k = min(kept, losses.numel())
        if int(hard.sum()) >= k:
            selected = losses[hard]
        else:
            selected, _ = losses.topk(k)
        per_image.append(selected.mean())
    return torch.stack(per_image).mean()
