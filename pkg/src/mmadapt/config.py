"""Declarative run configuration: dataclasses, strict parsing, overrides, YAML round trip."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError

FUSION_KINDS = ("addition", "concatenation", "road_fusion")
ENCODER_MODES = ("modality_specific", "modality_agnostic")


@dataclass
class BackboneConfig:
    """Plain ViT image encoder split into sequential block groups."""

    patch_size: int = 16
    embed_dim: int = 1024
    depth: int = 24
    num_groups: int = 4
    num_heads: int = 16
    image_size: int = 1024
    mlp_ratio: float = 4.0
    finetune: bool = True
    # Path to a pretrained weight archive; None trains the backbone from scratch.
    pretrained: str | None = None
    use_rel_pos: bool = False

    def validate(self, path: str = "backbone"):
        if self.depth % self.num_groups != 0:
            raise ConfigError(f"{path}: depth {self.depth} not divisible by num_groups {self.num_groups}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(f"{path}: embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(f"{path}: image_size {self.image_size} not divisible by patch_size {self.patch_size}")


@dataclass
class FusionConfig:
    """Two hierarchical conv encoders plus an interchangeable fusion module."""

    kind: str = "road_fusion"
    encoder_mode: str = "modality_specific"
    encoder_channels: tuple[int, int, int, int] = (96, 192, 384, 768)
    encoder_depths: tuple[int, int, int, int] = (3, 3, 27, 3)
    target_dim: int = 1024
    attn_heads: int = 4
    # False drops the auxiliary branch entirely: single encoder, no fusion module.
    use_aux: bool = True

    def validate(self, path: str = "fusion"):
        if self.kind not in FUSION_KINDS:
            raise ConfigError(f"{path}.kind: {self.kind!r} not one of {FUSION_KINDS}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"{path}.encoder_mode: {self.encoder_mode!r} not one of {ENCODER_MODES}")
        if len(self.encoder_channels) != 4 or any(c <= 0 for c in self.encoder_channels):
            raise ConfigError(f"{path}.encoder_channels: need 4 positive widths, got {self.encoder_channels}")
        for c in self.encoder_channels:
            if c % self.attn_heads != 0:
                raise ConfigError(f"{path}: channel width {c} not divisible by attn_heads {self.attn_heads}")


@dataclass
class AdapterConfig:
    """Injector/extractor side network built on multi-scale deformable attention."""

    num_pairs: int = 4
    msda_heads: int = 8
    msda_points: int = 4
    ffn_ratio: float = 0.25
    gamma_init: float = 0.0

    def validate(self, path: str = "adapter"):
        if self.msda_points < 1:
            raise ConfigError(f"{path}.msda_points: must be >= 1, got {self.msda_points}")
        if self.ffn_ratio <= 0:
            raise ConfigError(f"{path}.ffn_ratio: must be > 0, got {self.ffn_ratio}")


@dataclass
class HeadConfig:
    """Per-pixel classification head."""

    num_classes: int = 19
    decoder_dim: int = 512
    ignore_index: int = 255

    def validate(self, path: str = "head"):
        if self.num_classes < 2:
            raise ConfigError(f"{path}.num_classes: must be >= 2, got {self.num_classes}")


@dataclass
class ScheduleConfig:
    """Warm-up + polynomial-decay learning rate with layer-wise multipliers."""

    eta_base: float = 2e-4
    eta_min: float = 0.0
    warmup_epochs: int = 10
    warmup_ratio: float = 0.1
    alpha: float = 0.9
    total_epochs: int = 100
    layer_decay: float = 0.9
    weight_decay: float = 1e-2
    new_module_boost: float = 1.0

    def validate(self, path: str = "schedule"):
        if not (0 < self.warmup_ratio <= 1):
            raise ConfigError(f"{path}.warmup_ratio: must be in (0, 1], got {self.warmup_ratio}")
        if not (0 <= self.warmup_epochs < self.total_epochs):
            raise ConfigError(
                f"{path}: warmup_epochs {self.warmup_epochs} must be in [0, total_epochs={self.total_epochs})"
            )
        if self.alpha <= 0:
            raise ConfigError(f"{path}.alpha: must be > 0, got {self.alpha}")


@dataclass
class OhemConfig:
    """Hard-pixel mining for the cross-entropy loss."""

    prob_threshold: float = 0.7
    # None resolves to crop_area / 16 at validation time.
    min_kept: int | None = None
    ignore_index: int = 255

    def validate(self, path: str = "ohem"):
        if not (0 < self.prob_threshold < 1):
            raise ConfigError(f"{path}.prob_threshold: must be in (0, 1), got {self.prob_threshold}")
        if self.min_kept is not None and self.min_kept < 1:
            raise ConfigError(f"{path}.min_kept: must be >= 1, got {self.min_kept}")


@dataclass
class AugmentConfig:
    """Shared geometric + RGB-only photometric training augmentation."""

    resize_range: tuple[float, float] = (0.5, 2.0)
    hflip_prob: float = 0.5
    photometric: bool = True
    blur_prob: float = 0.2
    crop_size: int = 1024

    def validate(self, path: str = "augment"):
        lo, hi = self.resize_range
        if not lo < hi:
            raise ConfigError(f"{path}.resize_range: low must be < high, got {self.resize_range}")
        for name, p in (("hflip_prob", self.hflip_prob), ("blur_prob", self.blur_prob)):
            if not (0 <= p <= 1):
                raise ConfigError(f"{path}.{name}: must be in [0, 1], got {p}")
        if self.crop_size % 32 != 0:
            raise ConfigError(f"{path}.crop_size: must be divisible by 32, got {self.crop_size}")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    head: HeadConfig = field(default_factory=HeadConfig)


@dataclass
class TrainingConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ohem: OhemConfig = field(default_factory=OhemConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    # None runs for schedule.total_epochs.
    epochs: int | None = None
    accumulation: int = 2
    micro_batch: int = 4
    val_interval: int = 1
    mixed_precision: bool = False
    deterministic: bool = True


@dataclass
class DataConfig:
    root: str = ""
    train_split: str = "train"
    val_split: str | None = "val"
    eval_split: str = "test"
    manifest: str | None = None


@dataclass
class OutputConfig:
    run_dir: str | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        m = self.model
        m.backbone.validate("model.backbone")
        m.fusion.validate("model.fusion")
        m.adapter.validate("model.adapter")
        m.head.validate("model.head")
        t = self.training
        t.schedule.validate("training.schedule")
        t.ohem.validate("training.ohem")
        t.augment.validate("training.augment")
        if m.fusion.target_dim != m.backbone.embed_dim:
            raise ConfigError(
                f"model.fusion.target_dim: {m.fusion.target_dim} must equal model.backbone.embed_dim "
                f"{m.backbone.embed_dim}"
            )
        if m.adapter.num_pairs != m.backbone.num_groups:
            raise ConfigError(
                f"model.adapter.num_pairs: {m.adapter.num_pairs} must equal model.backbone.num_groups "
                f"{m.backbone.num_groups}"
            )
        if m.backbone.embed_dim % m.adapter.msda_heads != 0:
            raise ConfigError(
                f"model.adapter.msda_heads: embed_dim {m.backbone.embed_dim} not divisible by "
                f"{m.adapter.msda_heads}"
            )
        if t.augment.crop_size != m.backbone.image_size:
            raise ConfigError(
                f"training.augment.crop_size: {t.augment.crop_size} must equal model.backbone.image_size "
                f"{m.backbone.image_size}"
            )
        if t.accumulation < 1 or t.micro_batch < 1:
            raise ConfigError("training: accumulation and micro_batch must be >= 1")
        return self

    @property
    def epochs(self) -> int:
        return self.training.epochs if self.training.epochs is not None else self.training.schedule.total_epochs

    def resolved_min_kept(self) -> int:
        if self.training.ohem.min_kept is not None:
            return self.training.ohem.min_kept
        return max(1, self.training.augment.crop_size ** 2 // 16)


def _coerce(value, annotation, path: str):
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            if type(None) in typing.get_args(annotation):
                return None
            raise ConfigError(f"{path}: may not be null")
        return _coerce(value, args[0], path)
    if origin is tuple:
        if isinstance(value, str):
            value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence, got {type(value).__name__}")
        args = typing.get_args(annotation)
        elem = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, elem, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if annotation is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        out = float(value)
        if out != int(out):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(out)
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        return str(value)
    raise ConfigError(f"{path}: unsupported field type {annotation}")


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, f in known.items():
        if name not in data:
            continue
        sub_path = f"{path}.{name}" if path else name
        ann = hints[f.name]
        if dataclasses.is_dataclass(ann):
            kwargs[name] = _from_dict(ann, data[name], sub_path)
        else:
            kwargs[name] = _coerce(data[name], ann, sub_path)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data or {}, "")


def config_to_dict(cfg: RunConfig) -> dict:
    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted ``key=value`` overrides in order; later entries win."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = cfg
        for i, part in enumerate(parts[:-1]):
            if not dataclasses.is_dataclass(target) or part not in {f.name for f in fields(target)}:
                raise ConfigError(f"{'.'.join(parts[: i + 1])}: unknown key")
            target = getattr(target, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in fields(target)}:
            raise ConfigError(f"{key}: unknown key")
        hints = typing.get_type_hints(type(target))
        try:
            parsed = yaml.safe_load(raw)
        except yaml.YAMLError:
            parsed = raw
        setattr(target, leaf, _coerce(parsed, hints[leaf], key))
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from e
    cfg = config_from_dict(data)
    if overrides:
        apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def save_config(cfg: RunConfig, path: str | Path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
