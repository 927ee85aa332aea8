"""Decision-level fusion of per-sensor class reports.

Every poll, each included sensor's current report becomes one row of a
4x4 sensor-by-class matrix (weight times confidence in the reported class
column). The column sums enter a 10-row FIFO; the window's column sums pick
the system class and its confidence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import (
    SENSOR_CLASSES,
    VISION_CLASSES,
    BBox,
    Detection,
    ParameterError,
    SensorId,
    TargetClass,
)

FUSION_SENSORS = (SensorId.IRCAM, SensorId.VCAM, SensorId.AUDIO, SensorId.ADSB)
CLASS_COLUMNS = VISION_CLASSES
# Tie-break order when window sums are equal: a missed drone costs more than a false alarm.
TIE_PRIORITY = (TargetClass.DRONE, TargetClass.HELICOPTER, TargetClass.AIRPLANE, TargetClass.BIRD)


@dataclass(frozen=True)
class FusionConfig:
    include: Mapping[SensorId, bool] = field(
        default_factory=lambda: {s: True for s in FUSION_SENSORS}
    )
    weight: Mapping[SensorId, float] = field(
        default_factory=lambda: {s: 1.0 for s in FUSION_SENSORS}
    )
    min_sensors: int = 1
    window_rows: int = 10

    def __post_init__(self):
        inc = {SensorId(k): bool(v) for k, v in self.include.items()}
        w = {SensorId(k): float(v) for k, v in self.weight.items()}
        for s in FUSION_SENSORS:
            inc.setdefault(s, False)
            w.setdefault(s, 1.0)
        object.__setattr__(self, "include", inc)
        object.__setattr__(self, "weight", w)
        if not any(inc[s] for s in FUSION_SENSORS):
            raise ParameterError("at least one sensor must be included")
        if not all(np.isfinite(w[s]) and 0.0 <= w[s] <= 1.0 for s in FUSION_SENSORS):
            raise ParameterError("sensor weights must be finite values in [0, 1]")
        if self.min_sensors < 1 or self.window_rows < 1:
            raise ParameterError("min_sensors and window_rows must be >= 1")

    @property
    def included(self) -> tuple[SensorId, ...]:
        return tuple(s for s in FUSION_SENSORS if self.include[s])

    @classmethod
    def from_dict(cls, d: Mapping) -> "FusionConfig":
        return cls(
            include=d.get("include", {s.value: True for s in FUSION_SENSORS}),
            weight=d.get("weights", d.get("weight", {})),
            min_sensors=int(d.get("min_sensors", 1)),
            window_rows=int(d.get("window_rows", 10)),
        )


@dataclass
class ResultMatrix:
    """Rows follow ``FUSION_SENSORS``, columns follow ``CLASS_COLUMNS``."""

    values: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    detecting: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=bool))
    ignored: int = 0


@dataclass(frozen=True)
class SystemOutput:
    t: int
    cls: Optional[TargetClass]
    confidence: float
    sensors_detecting: int

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "class": None if self.cls is None else self.cls.value,
            "confidence": self.confidence,
            "sensors_detecting": self.sensors_detecting,
        }


def ingest(
    matrix: Optional[ResultMatrix],
    reports: Mapping[SensorId, Optional[Detection]],
    cfg: FusionConfig,
) -> ResultMatrix:
    """Write this poll's reports into a fresh result matrix.

    Reports from excluded sensors are ignored and counted. Audio
    ``Background`` and ADS-B ``NoData`` have no class column; they leave a
    zero row and do not count as detections.
    """
    out = ResultMatrix(ignored=0 if matrix is None else matrix.ignored)
    for sensor, det in reports.items():
        sensor = SensorId(sensor)
        if det is None:
            continue
        if sensor not in FUSION_SENSORS:
            raise ParameterError(f"{sensor.value} does not take part in fusion")
        if det.cls not in SENSOR_CLASSES[sensor]:
            raise ParameterError(f"{sensor.value} cannot report {det.cls.value}")
        if not cfg.include[sensor]:
            out.ignored += 1
            continue
        if det.cls not in CLASS_COLUMNS:
            continue
        row = FUSION_SENSORS.index(sensor)
        out.values[row, :] = 0.0
        out.values[row, CLASS_COLUMNS.index(det.cls)] = cfg.weight[sensor] * det.confidence
        out.detecting[row] = True
    return out


@dataclass
class FusionState:
    window: deque = field(default_factory=lambda: deque(maxlen=10))

    @classmethod
    def for_config(cls, cfg: FusionConfig) -> "FusionState":
        return cls(deque(maxlen=cfg.window_rows))


def _argmax_with_priority(sums: np.ndarray) -> TargetClass:
    best = sums.max()
    for c in TIE_PRIORITY:
        if sums[CLASS_COLUMNS.index(c)] == best:
            return c
    raise AssertionError("unreachable")


def fusion_step(
    state: FusionState, matrix: ResultMatrix, cfg: FusionConfig, t: int = 0
) -> tuple[FusionState, SystemOutput]:
    if state.window.maxlen != cfg.window_rows:
        state.window = deque(state.window, maxlen=cfg.window_rows)
    state.window.append(matrix.values.sum(axis=0))
    sums = np.sum(state.window, axis=0)

    detecting = int(sum(matrix.detecting[FUSION_SENSORS.index(s)] for s in cfg.included))
    n_included = len(cfg.included)
    peak = float(sums.max())
    confidence = min(1.0, max(0.0, peak / (cfg.window_rows * n_included)))
    if peak <= 0.0:
        return state, SystemOutput(t, None, 0.0, detecting)
    cls = _argmax_with_priority(sums) if detecting >= cfg.min_sensors else None
    return state, SystemOutput(t, cls, confidence, detecting)


@dataclass(frozen=True)
class PollRecord:
    """One main-loop poll: the current report of each fusion sensor."""

    t: int
    reports: Mapping[SensorId, Optional[Detection]]

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "reports": {
                s.value: (None if self.reports.get(s) is None else _report_dict(self.reports[s]))
                for s in FUSION_SENSORS
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PollRecord":
        t = int(d["t"])
        reports: dict[SensorId, Optional[Detection]] = {}
        for name, rep in (d.get("reports") or {}).items():
            sensor = SensorId(name)
            if rep is None:
                reports[sensor] = None
                continue
            reports[sensor] = Detection(
                sensor=sensor,
                cls=TargetClass(rep["class"]),
                confidence=float(rep["confidence"]),
                t=int(rep.get("t", t)),
                bbox=_bbox(rep.get("bbox")),
            )
        return cls(t, reports)


def _report_dict(det: Detection) -> dict:
    d = det.to_dict()
    d.pop("sensor")
    return d


def _bbox(v):
    return None if v is None else BBox(*v)


def fusion_replay(records: Iterable, cfg: FusionConfig) -> list[SystemOutput]:
    """Run fusion over a time-sorted sequence of poll records."""
    state = FusionState.for_config(cfg)
    out: list[SystemOutput] = []
    last_t = None
    matrix = None
    for rec in records:
        if not isinstance(rec, PollRecord):
            rec = PollRecord.from_dict(rec)
        if last_t is not None and rec.t < last_t:
            raise ParameterError(f"log is not sorted by time ({rec.t} after {last_t})")
        last_t = rec.t
        matrix = ingest(matrix, rec.reports, cfg)
        state, result = fusion_step(state, matrix, cfg, rec.t)
        out.append(result)
    return out


def count_events(timeline: Iterable[SystemOutput], cls: Optional[TargetClass] = None) -> int:
    """Number of maximal runs of consecutive ticks with a (matching) system class."""
    events, prev = 0, None
    for o in timeline:
        cur = o.cls if (cls is None or o.cls == cls) else None
        if cur is not None and cur != prev:
            events += 1
        prev = cur
    return events
