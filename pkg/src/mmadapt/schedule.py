"""Learning-rate schedule and parameter grouping.

The schedule warms up exponentially from eta_base * warmup_ratio to eta_base
over the first warmup_epochs, then follows a polynomial decay toward eta_min.
As written the two branches do not meet at the warm-up boundary: the decay
branch evaluated just past warmup_epochs sits below eta_base, and that
downward jump is part of the contract, not smoothed away.

Backbone blocks receive geometrically decaying multipliers from the top layer
down; embeddings and normalization parameters sit at layer zero with zero
weight decay; newly introduced modules train at the top multiplier times a
configurable boost.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ScheduleConfig

_NORM_TYPES = (nn.LayerNorm, nn.BatchNorm1d, nn.BatchNorm2d, nn.GroupNorm)


def lr_at(p: float, cfg: ScheduleConfig) -> float:
    """Learning rate at epoch position p (fractional positions step per-iteration)."""
    if p < 0 or p > cfg.total_epochs:
        raise ValueError(f"epoch position {p} outside [0, {cfg.total_epochs}]")
    if cfg.warmup_epochs > 0 and p <= cfg.warmup_epochs:
        return cfg.eta_base * cfg.warmup_ratio ** (1.0 - p / cfg.warmup_epochs)
    return (cfg.eta_base - cfg.eta_min) * (1.0 - p / cfg.total_epochs) ** cfg.alpha + cfg.eta_min


def layerwise_lr(layer_index: int, num_layers: int, cfg: ScheduleConfig) -> float:
    """Multiplier gamma^(L - l - 1) for backbone layer l of L; the top layer gets 1."""
    if not 0 <= layer_index < num_layers:
        raise ValueError(f"layer index {layer_index} outside [0, {num_layers})")
    return cfg.layer_decay ** (num_layers - layer_index - 1)


def _norm_parameter_names(model: nn.Module) -> set[str]:
    names = set()
    for module_name, module in model.named_modules():
        if isinstance(module, _NORM_TYPES) or type(module).__name__ == "LayerNorm2d":
            for param_name, _ in module.named_parameters(recurse=False):
                names.add(f"{module_name}.{param_name}" if module_name else param_name)
    return names


def build_param_groups(model: nn.Module, cfg: ScheduleConfig,
                       backbone_prefix: str = "backbone.") -> list[dict]:
    """Partition trainable parameters into optimizer groups.

    Backbone block j takes the layer-j multiplier; backbone embeddings and all
    normalization parameters take layer 0 and zero weight decay; everything
    outside the backbone takes multiplier new_module_boost (norm parameters
    still exempt from decay). Every trainable parameter lands in exactly one
    group.
    """
    num_layers = len(model.backbone.blocks)
    norm_names = _norm_parameter_names(model)
    groups: dict[tuple[float, float], dict] = {}
    seen: set[int] = set()
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        if id(param) in seen:
            raise RuntimeError(f"parameter {name} assigned to more than one group")
        seen.add(id(param))
        is_norm = name in norm_names
        if name.startswith(backbone_prefix):
            sub = name[len(backbone_prefix):]
            if is_norm or sub.startswith(("patch_embed", "pos_embed")):
                layer = 0
                decay = 0.0
            elif sub.startswith("blocks."):
                layer = int(sub.split(".")[1])
                decay = cfg.weight_decay
            else:
                layer = 0
                decay = 0.0 if is_norm else cfg.weight_decay
            scale = layerwise_lr(layer, num_layers, cfg)
        else:
            scale = cfg.new_module_boost
            decay = 0.0 if is_norm else cfg.weight_decay
        key = (scale, decay)
        group = groups.setdefault(
            key, {"params": [], "names": [], "lr_scale": scale, "weight_decay": decay}
        )
        group["params"].append(param)
        group["names"].append(name)
    return list(groups.values())


def make_optimizer(model: nn.Module, cfg: ScheduleConfig) -> torch.optim.AdamW:
    groups = build_param_groups(model, cfg)
    opt = torch.optim.AdamW(
        [{"params": g["params"], "weight_decay": g["weight_decay"], "lr": cfg.eta_base}
         for g in groups],
        lr=cfg.eta_base,
    )
    for torch_group, group in zip(opt.param_groups, groups):
        torch_group["lr_scale"] = group["lr_scale"]
        torch_group["names"] = group["names"]
    return opt


def set_lr(optimizer: torch.optim.Optimizer, p: float, cfg: ScheduleConfig) -> float:
    """Apply the scheduled rate times each group's multiplier; returns the base rate."""
    base = lr_at(p, cfg)
    for group in optimizer.param_groups:
        group["lr"] = base * group.get("lr_scale", 1.0)
    return base
