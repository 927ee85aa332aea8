"""Deterministic scenario engine.

A scenario scripts targets along piecewise-linear trajectories in local
east/north/up metres around the system. Sensor stand-ins turn what a
sensor could see into stochastic detections; the fish-eye camera gets
rendered frames so the real foreground/tracking pipeline runs on them;
ADS-B-equipped targets emit valid DF17 frames.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import adsb
from .core import (
    AUDIO_CLASSES,
    SENSOR_CLASSES,
    VISION_CLASSES,
    BBox,
    Detection,
    ParameterError,
    SensorId,
    TargetClass,
)
from .geometry import (
    FT_TO_M,
    IR_CAMERA,
    VIDEO_CAMERA,
    CameraModel,
    DriBin,
    DriConfig,
    GeoPosition,
    RelativeGeometry,
    SystemPose,
    dri_bin,
    enu_to_geometry,
    fov_contains,
    offset_position,
    pixel_width,
)
from .platform import offset_to_pixel

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file does not match the schema or is inconsistent."""


class VirtualClock:
    """Millisecond clock that only moves forward."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    @property
    def now(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> int:
        if t_ms < self._now:
            raise ParameterError(f"clock cannot go back from {self._now} to {t_ms}")
        self._now = int(t_ms)
        return self._now


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent Philox stream for ``name``; adding streams never shifts others."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & 0xFFFFFFFF, key])))


# --- scenario model --------------------------------------------------------


@dataclass(frozen=True)
class Waypoint:
    t_ms: int
    enu: tuple[float, float, float]


@dataclass(frozen=True)
class AdsbSpec:
    icao: str
    callsign: str = ""
    category: adsb.VehicleCategory = adsb.VehicleCategory.NONE
    send_identification: bool = True
    phase_ms: int = 0


@dataclass(frozen=True)
class TargetSpec:
    name: str
    cls: TargetClass
    size_m: float
    waypoints: tuple[Waypoint, ...]
    adsb: Optional[AdsbSpec] = None
    sound_class: Optional[TargetClass] = None


@dataclass(frozen=True)
class TargetState:
    enu: np.ndarray
    velocity: np.ndarray


def target_state(target: TargetSpec, t_ms: int) -> Optional[TargetState]:
    """Position and velocity (m, m/s) by linear interpolation; ``None`` outside the path.

    A single waypoint is a static target for the whole run.
    """
    wps = target.waypoints
    if len(wps) == 1:
        return TargetState(np.array(wps[0].enu, float), np.zeros(3))
    if t_ms < wps[0].t_ms or t_ms > wps[-1].t_ms:
        return None
    for a, b in zip(wps, wps[1:]):
        if a.t_ms <= t_ms <= b.t_ms:
            pa, pb = np.array(a.enu, float), np.array(b.enu, float)
            span = b.t_ms - a.t_ms
            frac = (t_ms - a.t_ms) / span
            vel = (pb - pa) / (span / 1000.0)
            return TargetState(pa + frac * (pb - pa), vel)
    raise AssertionError("unreachable")


@dataclass
class SensorModel:
    """Stochastic stand-in for one detector or classifier.

    ``confusion[bin]`` is a row-stochastic matrix over ``classes``;
    ``detect_prob`` and ``confusion`` are keyed by distance bin name, with
    ``"default"`` as fallback.
    """

    sensor: SensorId
    rate_hz: float
    classes: tuple[TargetClass, ...]
    detect_prob: dict[str, float] = field(default_factory=lambda: {"default": 1.0})
    confusion: dict[str, np.ndarray] = field(default_factory=dict)
    confidence: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)
    default_confidence: tuple[float, float] = (0.8, 0.1)
    center_sigma_px: float = 0.0
    size_sigma_px: float = 0.0
    max_range_m: Optional[float] = None
    false_alarms: tuple[tuple[int, TargetClass, float], ...] = ()
    enabled: bool = True
    stall_after_ms: Optional[int] = None

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ParameterError("sensor rate must be positive")
        for k, p in self.detect_prob.items():
            if not 0 <= p <= 1:
                raise ParameterError(f"detect_prob[{k}] = {p} outside [0, 1]")
        n = len(self.classes)
        for k, m in self.confusion.items():
            m = np.asarray(m, float)
            if m.shape != (n, n) or np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ParameterError(f"confusion[{k}] must be a {n}x{n} row-stochastic matrix")
            self.confusion[k] = m

    def prob(self, bin_name: str) -> float:
        return self.detect_prob.get(bin_name, self.detect_prob.get("default", 1.0))

    def confusion_row(self, bin_name: str, true_cls: TargetClass) -> np.ndarray:
        m = self.confusion.get(bin_name, self.confusion.get("default"))
        if true_cls not in self.classes:
            raise ParameterError(f"{true_cls.value} not in the class set of {self.sensor.value}")
        i = self.classes.index(true_cls)
        if m is None:
            row = np.zeros(len(self.classes))
            row[i] = 1.0
            return row
        return m[i]


def _truncated_normal(rng: np.random.Generator, mean: float, sd: float) -> float:
    if sd <= 0:
        return min(1.0, max(0.0, mean))
    for _ in range(64):
        v = rng.normal(mean, sd)
        if 0.0 <= v <= 1.0:
            return float(v)
    return min(1.0, max(0.0, mean))


def emit_detection(
    model: SensorModel,
    true_cls: TargetClass,
    bin_name: str,
    bbox: Optional[BBox],
    rng: np.random.Generator,
    t: int = 0,
    image_size: Optional[tuple[int, int]] = None,
) -> Optional[Detection]:
    """One stochastic detection attempt for a target the sensor can see."""
    if rng.random() >= model.prob(bin_name):
        return None
    row = model.confusion_row(bin_name, true_cls)
    reported = model.classes[int(rng.choice(len(row), p=row))]
    mean, sd = model.confidence.get((true_cls.value, reported.value), model.default_confidence)
    conf = _truncated_normal(rng, mean, sd)
    out_box = None
    if bbox is not None:
        cx, cy = bbox.center
        cx += rng.normal(0.0, model.center_sigma_px) if model.center_sigma_px > 0 else 0.0
        cy += rng.normal(0.0, model.center_sigma_px) if model.center_sigma_px > 0 else 0.0
        w, h = bbox.w, bbox.h
        if model.size_sigma_px > 0:
            w += rng.normal(0.0, model.size_sigma_px)
            h += rng.normal(0.0, model.size_sigma_px)
        w, h = max(w, 1.0), max(h, 1.0)
        if image_size is not None:
            cx = min(max(cx, 0.0), float(image_size[0]))
            cy = min(max(cy, 0.0), float(image_size[1]))
        out_box = BBox(cx - w / 2.0, cy - h / 2.0, w, h)
    return Detection(model.sensor, reported, conf, t, out_box)


# --- scenario files --------------------------------------------------------

_CLASS_NAMES = [c.value for c in TargetClass]
_BIN_KEYS = {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "seed", "duration_s", "system", "targets"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "system": {
            "type": "object",
            "required": ["lat", "lon"],
            "properties": {
                "lat": {"type": "number", "minimum": -90, "maximum": 90},
                "lon": {"type": "number", "minimum": -180, "maximum": 180},
                "alt": {"type": "number"},
                "orientation_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 360},
            },
        },
        "cameras": {"type": "object"},
        "platform": {"type": "object"},
        "fusion": {"type": "object"},
        "fusion_changes": {"type": "array", "items": {"type": "object", "required": ["t_s"]}},
        "audio_radius_m": {"type": "number", "exclusiveMinimum": 0},
        "targets": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "waypoints"],
                "properties": {
                    "name": {"type": "string"},
                    "class": {"enum": [c.value for c in VISION_CLASSES]},
                    "size_m": {"type": "number", "exclusiveMinimum": 0},
                    "sound_class": {"enum": [None] + [c.value for c in AUDIO_CLASSES]},
                    "waypoints": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["t_s", "enu"],
                            "properties": {
                                "t_s": {"type": "number"},
                                "enu": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                            },
                        },
                    },
                    "adsb": {
                        "type": ["object", "null"],
                        "required": ["icao"],
                        "properties": {
                            "icao": {"type": "string", "pattern": "^[0-9A-Fa-f]{6}$"},
                            "callsign": {"type": "string", "pattern": "^[A-Za-z0-9 ]{0,8}$"},
                            "category": {"enum": [c.value for c in adsb.VehicleCategory]},
                        },
                    },
                },
            },
        },
        "sensors": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {
                    "rate_hz": {"type": "number", "exclusiveMinimum": 0},
                    "detect_prob": _BIN_KEYS,
                    "confusion": {"type": "object"},
                    "confidence": {"type": "object"},
                    "max_range_m": {"type": "number", "exclusiveMinimum": 0},
                    "enabled": {"type": "boolean"},
                    "false_alarms": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["t_s", "class"],
                            "properties": {
                                "t_s": {"type": "number"},
                                "class": {"enum": _CLASS_NAMES},
                                "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                            },
                        },
                    },
                },
            },
        },
    },
}

DEFAULT_RATES = {
    SensorId.IRCAM: 10.0,
    SensorId.VCAM: 10.0,
    SensorId.FCAM: 30.0,
    SensorId.AUDIO: 20.0,
    SensorId.ADSB: 1.0,
}


@dataclass
class FisheyeSettings:
    camera: CameraModel = CameraModel(hfov=180.0, vfov=180.0, width=640, height=480)
    max_range_m: float = 50.0
    min_radius_px: float = 2.0
    background_level: float = 0.6
    background_texture: float = 0.05
    target_level: float = 0.1


@dataclass
class Scenario:
    seed: int
    duration_ms: int
    system: SystemPose
    targets: list[TargetSpec]
    sensors: dict[SensorId, SensorModel]
    cameras: dict[SensorId, CameraModel]
    fisheye: FisheyeSettings = field(default_factory=FisheyeSettings)
    name: str = "scenario"
    platform: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=dict)
    fusion_changes: list[dict] = field(default_factory=list)
    audio_radius_m: float = 40.0
    dri: DriConfig = DriConfig()

    @property
    def origin(self) -> GeoPosition:
        return self.system.position


def _camera(d: dict, default: CameraModel) -> CameraModel:
    return CameraModel(
        hfov=float(d.get("hfov", default.hfov)),
        vfov=float(d.get("vfov", default.vfov)),
        width=int(d.get("width", default.width)),
        height=int(d.get("height", default.height)),
    )


def _sensor_model(sensor: SensorId, d: dict) -> SensorModel:
    classes = SENSOR_CLASSES[sensor] if sensor is not SensorId.FCAM else VISION_CLASSES
    if sensor is SensorId.ADSB:
        classes = VISION_CLASSES
    confusion = {}
    for bin_name, rows in (d.get("confusion") or {}).items():
        m = np.zeros((len(classes), len(classes)))
        for i, c in enumerate(classes):
            row = rows.get(c.value)
            if row is None:
                m[i, i] = 1.0
                continue
            for rep, p in row.items():
                m[i, classes.index(TargetClass(rep))] = float(p)
        confusion[bin_name] = m
    conf_table = {}
    for key, v in (d.get("confidence") or {}).items():
        if key == "default":
            continue
        true_name, _, rep_name = key.partition("->")
        conf_table[(true_name, rep_name)] = (float(v[0]), float(v[1]))
    default_conf = tuple(d.get("confidence", {}).get("default", (0.8, 0.1)))
    alarms = tuple(
        (int(round(a["t_s"] * 1000)), TargetClass(a["class"]), float(a.get("confidence", 0.8)))
        for a in d.get("false_alarms", [])
    )
    stall = d.get("stall_after_s")
    return SensorModel(
        sensor=sensor,
        rate_hz=float(d.get("rate_hz", DEFAULT_RATES[sensor])),
        classes=classes,
        detect_prob=dict(d.get("detect_prob", {"default": 1.0})),
        confusion=confusion,
        confidence=conf_table,
        default_confidence=(float(default_conf[0]), float(default_conf[1])),
        center_sigma_px=float(d.get("center_sigma_px", 0.0)),
        size_sigma_px=float(d.get("size_sigma_px", 0.0)),
        max_range_m=d.get("max_range_m"),
        false_alarms=alarms,
        enabled=bool(d.get("enabled", True)),
        stall_after_ms=None if stall is None else int(round(stall * 1000)),
    )


def scenario_from_dict(d: dict) -> Scenario:
    try:
        jsonschema.validate(d, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ScenarioError(f"{path or '<root>'}: {exc.message}") from exc

    sysd = d["system"]
    pose = SystemPose(
        GeoPosition(float(sysd["lat"]), float(sysd["lon"]), float(sysd.get("alt", 0.0))),
        float(sysd.get("orientation_deg", 0.0)),
    )
    targets = []
    for i, td in enumerate(d["targets"]):
        wps = tuple(
            Waypoint(int(round(w["t_s"] * 1000)), tuple(float(v) for v in w["enu"]))
            for w in td["waypoints"]
        )
        if any(b.t_ms <= a.t_ms for a, b in zip(wps, wps[1:])):
            raise ScenarioError(f"targets/{i}: waypoint times must be strictly increasing")
        a = td.get("adsb")
        tx = None
        if a:
            tx = AdsbSpec(
                icao=a["icao"].upper(),
                callsign=a.get("callsign", ""),
                category=adsb.VehicleCategory(a.get("category", "None")),
                send_identification=bool(a.get("send_identification", True)),
                phase_ms=int(a.get("phase_ms", 0)),
            )
        sound = td.get("sound_class")
        targets.append(
            TargetSpec(
                name=td.get("name", f"target{i}"),
                cls=TargetClass(td["class"]),
                size_m=float(td.get("size_m", 0.4)),
                waypoints=wps,
                adsb=tx,
                sound_class=None if sound is None else TargetClass(sound),
            )
        )

    sensors_d = d.get("sensors", {})
    sensors = {}
    for s in (SensorId.IRCAM, SensorId.VCAM, SensorId.FCAM, SensorId.AUDIO, SensorId.ADSB):
        sensors[s] = _sensor_model(s, sensors_d.get(s.value, {}))
    unknown = set(sensors_d) - {s.value for s in SensorId}
    if unknown:
        raise ScenarioError(f"sensors: unknown sensor names {sorted(unknown)}")

    cams_d = d.get("cameras", {})
    cameras = {
        SensorId.IRCAM: _camera(cams_d.get("IRcam", {}), IR_CAMERA),
        SensorId.VCAM: _camera(cams_d.get("Vcam", {}), VIDEO_CAMERA),
    }
    fe = FisheyeSettings()
    fd = cams_d.get("Fcam", {})
    fe.camera = _camera(fd, fe.camera)
    if fe.camera.height % 2:
        raise ScenarioError("cameras/Fcam: frame height must be even")
    fe.max_range_m = float(sensors_d.get("Fcam", {}).get("max_range_m", fe.max_range_m))
    fe.min_radius_px = float(fd.get("min_radius_px", fe.min_radius_px))

    return Scenario(
        seed=int(d["seed"]),
        duration_ms=int(round(d["duration_s"] * 1000)),
        system=pose,
        targets=targets,
        sensors=sensors,
        cameras=cameras,
        fisheye=fe,
        name=d.get("name", "scenario"),
        platform=dict(d.get("platform", {})),
        fusion=dict(d.get("fusion", {})),
        fusion_changes=sorted(d.get("fusion_changes", []), key=lambda c: c["t_s"]),
        audio_radius_m=float(d.get("audio_radius_m", 40.0)),
    )


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def demo_scenario_path() -> Path:
    return Path(str(resources.files("dronefuse") / "data" / "demo_scenario.json"))


# --- what the sensors see --------------------------------------------------


@dataclass(frozen=True)
class Sighting:
    target: TargetSpec
    enu: np.ndarray
    geometry: RelativeGeometry


def sightings(scn: Scenario, t_ms: int) -> list[Sighting]:
    out = []
    for tg in scn.targets:
        st = target_state(tg, t_ms)
        if st is None:
            continue
        e, n, u = (float(v) for v in st.enu)
        if e == 0 and n == 0 and u == 0:
            continue
        out.append(Sighting(tg, st.enu, enu_to_geometry(e, n, u)))
    return out


def camera_view(
    scn: Scenario, sensor: SensorId, pose: SystemPose, t_ms: int
) -> list[tuple[Sighting, BBox, DriBin]]:
    """Targets inside a narrow-FoV camera with their ideal boxes and DRI bins."""
    cam = scn.cameras[sensor]
    model = scn.sensors[sensor]
    out = []
    for s in sightings(scn, t_ms):
        if model.max_range_m is not None and s.geometry.sloping_distance > model.max_range_m:
            continue
        inside, off = fov_contains(pose, cam, s.geometry.azimuth, s.geometry.elevation)
        if not inside:
            continue
        px = pixel_width(s.target.size_m, s.geometry.sloping_distance, cam)
        size = max(px, 1.0)
        cx, cy = offset_to_pixel(off, cam)
        out.append((s, BBox(cx - size / 2.0, cy - size / 2.0, size, size), dri_bin(px, scn.dri)))
    return out


def sensor_report(
    scn: Scenario,
    sensor: SensorId,
    pose: SystemPose,
    t_ms: int,
    rng: np.random.Generator,
) -> Optional[Detection]:
    """Strongest detection of a vision sensor this frame, including scripted false alarms."""
    model = scn.sensors[sensor]
    cam = scn.cameras[sensor]
    cands = []
    for s, box, b in camera_view(scn, sensor, pose, t_ms):
        det = emit_detection(model, s.target.cls, b.value, box, rng, t_ms, (cam.width, cam.height))
        if det is not None:
            cands.append(det)
    period = 1000.0 / model.rate_hz
    for at, cls, conf in model.false_alarms:
        if at <= t_ms < at + period:
            box = BBox(cam.width / 2.0 - 5, cam.height / 2.0 - 5, 10.0, 10.0)
            cands.append(Detection(sensor, cls, conf, t_ms, box))
    if not cands:
        return None
    return max(cands, key=lambda d: d.confidence)


def audio_report(
    scn: Scenario, t_ms: int, rng: np.random.Generator
) -> Optional[Detection]:
    """Audio classifier output: nearest audible target, else background."""
    model = scn.sensors[SensorId.AUDIO]
    heard = [
        s
        for s in sightings(scn, t_ms)
        if s.target.sound_class is not None and s.geometry.sloping_distance <= scn.audio_radius_m
    ]
    true_cls = TargetClass.BACKGROUND
    if heard:
        true_cls = min(heard, key=lambda s: s.geometry.sloping_distance).target.sound_class
    period = 1000.0 / model.rate_hz
    for at, cls, conf in model.false_alarms:
        if at <= t_ms < at + period:
            return Detection(SensorId.AUDIO, cls, conf, t_ms)
    return emit_detection(model, true_cls, "default", None, rng, t_ms)


# --- fish-eye rendering ----------------------------------------------------


def fisheye_background(scn: Scenario) -> np.ndarray:
    fe = scn.fisheye
    cam = fe.camera
    rng = rng_stream(scn.seed, "fcam-background")
    rows = np.linspace(0.0, 1.0, cam.height)[:, None]
    base = fe.background_level - 0.1 * (rows - 0.5)
    tex = rng.uniform(-fe.background_texture, fe.background_texture, size=(cam.height, cam.width))
    return np.clip(base + tex, 0.0, 1.0)


def fisheye_pixel(cam: CameraModel, az_rel: float, el: float) -> tuple[float, float]:
    """Equidistant projection: the frame spans hfov x vfov centred on the horizon ahead."""
    return (
        cam.width / 2.0 + az_rel * cam.width / cam.hfov,
        cam.height / 2.0 - el * cam.height / cam.vfov,
    )


def fisheye_angles(cam: CameraModel, x: float, y: float) -> tuple[float, float]:
    return (
        (x - cam.width / 2.0) * cam.hfov / cam.width,
        (cam.height / 2.0 - y) * cam.vfov / cam.height,
    )


def render_fisheye_frame(
    scn: Scenario, t_ms: int, background: Optional[np.ndarray] = None
) -> np.ndarray:
    """Static textured sky plus one dark disc per visible target."""
    fe = scn.fisheye
    cam = fe.camera
    frame = (fisheye_background(scn) if background is None else background).copy()
    px_per_deg = cam.width / cam.hfov
    yy, xx = np.mgrid[0 : cam.height, 0 : cam.width]
    for s in sightings(scn, t_ms):
        g = s.geometry
        if g.sloping_distance > fe.max_range_m:
            continue
        az_rel = ((g.azimuth - scn.system.orientation + 180.0) % 360.0) - 180.0
        if abs(az_rel) > cam.hfov / 2.0 or abs(g.elevation) > cam.vfov / 2.0:
            continue
        cx, cy = fisheye_pixel(cam, az_rel, g.elevation)
        ang = math.degrees(2.0 * math.atan2(s.target.size_m / 2.0, g.sloping_distance))
        radius = max(ang * px_per_deg / 2.0, fe.min_radius_px)
        x0, x1 = int(max(0, math.floor(cx - radius))), int(min(cam.width, math.ceil(cx + radius) + 1))
        y0, y1 = int(max(0, math.floor(cy - radius))), int(min(cam.height, math.ceil(cy + radius) + 1))
        if x0 >= x1 or y0 >= y1:
            continue
        sub = (xx[y0:y1, x0:x1] - cx + 0.5) ** 2 + (yy[y0:y1, x0:x1] - cy + 0.5) ** 2 <= radius**2
        frame[y0:y1, x0:x1][sub] = fe.target_level
    return frame


# --- ADS-B emission --------------------------------------------------------


def target_geo(scn: Scenario, enu) -> GeoPosition:
    e, n, u = (float(v) for v in enu)
    return offset_position(scn.origin, e, n, u)


def emit_adsb(scn: Scenario, target: TargetSpec, t_ms: int) -> list[str]:
    """Frames a transponder sends at time ``t_ms`` (hex strings).

    Once per second: a position frame, alternating even and odd. Every five
    seconds an identification frame is sent as well.
    """
    tx = target.adsb
    if tx is None:
        return []
    local = t_ms - tx.phase_ms
    if local < 0 or local % 1000:
        return []
    st = target_state(target, t_ms)
    if st is None:
        return []
    k = local // 1000
    frames = []
    if tx.send_identification and k % 5 == 0:
        frames.append(adsb.encode_identification(tx.icao, tx.callsign, tx.category))
    pos = target_geo(scn, st.enu)
    frames.append(adsb.encode_position(tx.icao, pos.lat, pos.lon, pos.alt / FT_TO_M, odd=bool(k % 2)))
    return frames
