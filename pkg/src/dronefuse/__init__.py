"""Multi-sensor drone detection: sensor pipelines, decision-level fusion,
evaluation tools and a deterministic scenario simulator."""

from .core import BBox, Detection, ParameterError, SensorId, TargetClass, iou
from .fusion import FusionConfig, fusion_replay, fusion_step, ingest

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "FusionConfig",
    "ParameterError",
    "SensorId",
    "TargetClass",
    "fusion_replay",
    "fusion_step",
    "ingest",
    "iou",
]
