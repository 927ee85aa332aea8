"""Shared vocabulary: sensors, classes, boxes, detections and the IoU primitive."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional


class ParameterError(ValueError):
    """Raised when an operation receives an argument outside its contract."""


class TargetClass(str, enum.Enum):
    AIRPLANE = "Airplane"
    BIRD = "Bird"
    DRONE = "Drone"
    HELICOPTER = "Helicopter"
    BACKGROUND = "Background"
    NODATA = "NoData"


class SensorId(str, enum.Enum):
    IRCAM = "IRcam"
    VCAM = "Vcam"
    AUDIO = "Audio"
    ADSB = "ADSB"
    FCAM = "Fcam"


# Column order of the fusion result matrix and of per-class evaluation tables.
VISION_CLASSES = (
    TargetClass.AIRPLANE,
    TargetClass.BIRD,
    TargetClass.DRONE,
    TargetClass.HELICOPTER,
)
AUDIO_CLASSES = (TargetClass.DRONE, TargetClass.HELICOPTER, TargetClass.BACKGROUND)
ADSB_CLASSES = (
    TargetClass.AIRPLANE,
    TargetClass.DRONE,
    TargetClass.HELICOPTER,
    TargetClass.NODATA,
)

SENSOR_CLASSES: dict[SensorId, tuple[TargetClass, ...]] = {
    SensorId.IRCAM: VISION_CLASSES,
    SensorId.VCAM: VISION_CLASSES,
    SensorId.AUDIO: AUDIO_CLASSES,
    SensorId.ADSB: ADSB_CLASSES,
    SensorId.FCAM: (),
}

VISION_SENSORS = (SensorId.IRCAM, SensorId.VCAM)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ParameterError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def scaled(self, k: float) -> "BBox":
        return BBox(self.x * k, self.y * k, self.w * k, self.h * k)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Areas are taken from the same corner coordinates as the intersection, so
    a box compared with itself gives exactly 1.
    """
    ax2, ay2, bx2, by2 = a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h
    ix = min(ax2, bx2) - max(a.x, b.x)
    iy = min(ay2, by2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class AngleOffset:
    azimuth_offset: float
    elevation_offset: float


@dataclass(frozen=True)
class Detection:
    """One sensor's classified observation at virtual time ``t`` (ms)."""

    sensor: SensorId
    cls: TargetClass
    confidence: float
    t: int
    bbox: Optional[BBox] = None

    def __post_init__(self):
        object.__setattr__(self, "sensor", SensorId(self.sensor))
        object.__setattr__(self, "cls", TargetClass(self.cls))
        if self.sensor is SensorId.FCAM:
            raise ParameterError("the fish-eye worker emits pointing angles, not detections")
        if not (0.0 <= self.confidence <= 1.0):
            raise ParameterError(f"confidence {self.confidence} outside [0, 1]")
        if self.cls not in SENSOR_CLASSES[self.sensor]:
            raise ParameterError(f"{self.sensor.value} cannot emit class {self.cls.value}")
        is_vision = self.sensor in VISION_SENSORS
        if is_vision != (self.bbox is not None):
            raise ParameterError("bbox must be present exactly for vision sensors")

    def to_dict(self) -> dict:
        d = {
            "sensor": self.sensor.value,
            "class": self.cls.value,
            "confidence": self.confidence,
            "t": self.t,
        }
        if self.bbox is not None:
            d["bbox"] = self.bbox.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        bbox = BBox(*d["bbox"]) if d.get("bbox") is not None else None
        return cls(
            sensor=SensorId(d["sensor"]),
            cls=TargetClass(d["class"]),
            confidence=float(d["confidence"]),
            t=int(d["t"]),
            bbox=bbox,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def wrap180(angle: float) -> float:
    """Wrap an angle in degrees to [-180, 180)."""
    return (angle + 180.0) % 360.0 - 180.0
