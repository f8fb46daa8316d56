"""Multimodal side-adapter semantic segmentation."""

from .config import (
    AdapterConfig,
    AugmentConfig,
    BackboneConfig,
    FusionConfig,
    HeadConfig,
    ModelConfig,
    OhemConfig,
    RunConfig,
    ScheduleConfig,
    load_config,
)
from .model import MultimodalSegmenter, build_model
from .tokens import FeaturePyramid, TokenMatrix

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AugmentConfig",
    "BackboneConfig",
    "FeaturePyramid",
    "FusionConfig",
    "HeadConfig",
    "ModelConfig",
    "MultimodalSegmenter",
    "OhemConfig",
    "RunConfig",
    "ScheduleConfig",
    "TokenMatrix",
    "build_model",
    "load_config",
    "__version__",
]
