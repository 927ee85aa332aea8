"""Position and pointing math.

Local geometry uses an equirectangular approximation around the system
position, which is adequate for the tens of kilometres an ADS-B display
covers. Distances are metres, angles degrees.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import reduce
from typing import Optional

from .core import AngleOffset, ParameterError, wrap180

EARTH_RADIUS_M = 6371000.0
FT_TO_M = 0.3048


class NmeaError(ValueError):
    """Malformed sentence or checksum mismatch."""


class GeometryError(ParameterError):
    pass


@dataclass(frozen=True)
class GeoPosition:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not (abs(self.lat) <= 90 and abs(self.lon) <= 180):
            raise ParameterError(f"invalid position lat={self.lat} lon={self.lon}")


@dataclass(frozen=True)
class SystemPose:
    position: GeoPosition
    orientation: float = 0.0
    pan: float = 0.0
    tilt: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.orientation < 360.0):
            raise ParameterError(f"orientation {self.orientation} outside [0, 360)")


@dataclass(frozen=True)
class CameraModel:
    hfov: float
    vfov: float
    width: int
    height: int

    def __post_init__(self):
        if not (0 < self.hfov <= 360) or self.vfov <= 0:
            raise ParameterError(f"bad field of view {self.hfov}x{self.vfov}")
        if self.width <= 0 or self.height <= 0:
            raise ParameterError("camera resolution must be positive")


IR_CAMERA = CameraModel(hfov=24.0, vfov=19.0, width=320, height=256)
VIDEO_CAMERA = CameraModel(hfov=24.0, vfov=19.0, width=640, height=512)
FISHEYE_CAMERA = CameraModel(hfov=180.0, vfov=90.0, width=1024, height=384)


@dataclass(frozen=True)
class DriConfig:
    identify_px: float = 15.0
    recognize_px: float = 5.0

    def __post_init__(self):
        if not (self.identify_px > self.recognize_px > 0):
            raise ParameterError("need identify_px > recognize_px > 0")


class DriBin(str, enum.Enum):
    CLOSE = "Close"
    MEDIUM = "Medium"
    DISTANT = "Distant"


@dataclass(frozen=True)
class RelativeGeometry:
    azimuth: float
    elevation: float
    sloping_distance: float
    horizontal_distance: float


def nmea_checksum(payload: str) -> int:
    return reduce(lambda acc, ch: acc ^ ord(ch), payload, 0)


def _ddmm_to_deg(value: str, hemi: str, deg_digits: int) -> float:
    deg = int(value[:deg_digits])
    minutes = float(value[deg_digits:])
    out = deg + minutes / 60.0
    if hemi in ("S", "W"):
        out = -out
    elif hemi not in ("N", "E"):
        raise NmeaError(f"bad hemisphere {hemi!r}")
    return out


def parse_nmea(sentence: str) -> Optional[GeoPosition]:
    """Parse a GGA or RMC sentence.

    Returns ``None`` when the receiver reports no fix. Raises
    :class:`NmeaError` for checksum failures and unsupported or malformed
    sentences. RMC carries no altitude, so its position has ``alt=0``.
    """
    s = sentence.strip()
    if not s.startswith("$") or "*" not in s:
        raise NmeaError("sentence must start with '$' and carry a checksum")
    payload, _, check = s[1:].partition("*")
    try:
        expected = int(check[:2], 16)
    except ValueError as exc:
        raise NmeaError(f"bad checksum field {check!r}") from exc
    if nmea_checksum(payload) != expected:
        raise NmeaError("checksum mismatch")

    fields = payload.split(",")
    kind = fields[0][-3:]
    try:
        if kind == "GGA":
            if fields[6] in ("", "0"):
                return None
            lat = _ddmm_to_deg(fields[2], fields[3], 2)
            lon = _ddmm_to_deg(fields[4], fields[5], 3)
            alt = float(fields[9]) if fields[9] else 0.0
            return GeoPosition(lat, lon, alt)
        if kind == "RMC":
            if fields[2] != "A":
                return None
            lat = _ddmm_to_deg(fields[3], fields[4], 2)
            lon = _ddmm_to_deg(fields[5], fields[6], 3)
            return GeoPosition(lat, lon, 0.0)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, NmeaError):
            raise
        raise NmeaError(f"malformed {kind} sentence") from exc
    raise NmeaError(f"unsupported sentence type {fields[0]!r}")


def enu_offset(origin: GeoPosition, target: GeoPosition) -> tuple[float, float, float]:
    """East, north, up offset of ``target`` from ``origin`` in metres."""
    lat0 = math.radians(origin.lat)
    dn = math.radians(target.lat - origin.lat) * EARTH_RADIUS_M
    dlon = wrap180(target.lon - origin.lon)
    de = math.radians(dlon) * EARTH_RADIUS_M * math.cos(lat0)
    return de, dn, target.alt - origin.alt


def offset_position(origin: GeoPosition, east: float, north: float, up: float) -> GeoPosition:
    """Inverse of :func:`enu_offset`."""
    lat0 = math.radians(origin.lat)
    lat = origin.lat + math.degrees(north / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(east / (EARTH_RADIUS_M * math.cos(lat0)))
    return GeoPosition(lat, wrap180(lon), origin.alt + up)


def enu_to_geometry(east: float, north: float, up: float) -> RelativeGeometry:
    horizontal = math.hypot(east, north)
    if horizontal == 0.0 and up == 0.0:
        raise GeometryError("coincident points: azimuth undefined")
    azimuth = math.degrees(math.atan2(east, north)) % 360.0
    elevation = math.degrees(math.atan2(up, horizontal))
    return RelativeGeometry(azimuth, elevation, math.hypot(horizontal, up), horizontal)


def relative_geometry(sys: SystemPose, target: GeoPosition) -> RelativeGeometry:
    """Azimuth (from true north), elevation and distances of a target."""
    return enu_to_geometry(*enu_offset(sys.position, target))


def fov_contains(
    sys: SystemPose, cam: CameraModel, az: float, el: float
) -> tuple[bool, AngleOffset]:
    """Whether a direction falls inside the camera's field of view.

    The camera boresight is the system orientation plus the platform pan,
    raised by the platform tilt. The offset is returned regardless.
    """
    daz = wrap180(az - (sys.orientation + sys.pan))
    dele = el - sys.tilt
    inside = abs(daz) <= cam.hfov / 2.0 and abs(dele) <= cam.vfov / 2.0
    return inside, AngleOffset(daz, dele)


def pixel_width(target_width: float, distance: float, cam: CameraModel) -> float:
    if distance <= 0:
        raise ParameterError(f"distance must be positive, got {distance}")
    return target_width * cam.width / (2.0 * distance * math.tan(math.radians(cam.hfov) / 2.0))


def distance_for_pixel_width(target_width: float, pixels: float, cam: CameraModel) -> float:
    """Range at which a target of ``target_width`` metres spans ``pixels``."""
    if pixels <= 0:
        raise ParameterError("pixels must be positive")
    return target_width * cam.width / (2.0 * pixels * math.tan(math.radians(cam.hfov) / 2.0))


def dri_bin(px: float, cfg: DriConfig = DriConfig()) -> DriBin:
    if px < 0:
        raise ParameterError("pixel width must be non-negative")
    if px >= cfg.identify_px:
        return DriBin.CLOSE
    if px >= cfg.recognize_px:
        return DriBin.MEDIUM
    return DriBin.DISTANT


def radar_range(reference_range: float, rcs_ratio: float) -> float:
    """Detection range scaled by the fourth root of the RCS ratio."""
    if reference_range <= 0 or rcs_ratio <= 0:
        raise ParameterError("reference range and RCS ratio must be positive")
    return reference_range * rcs_ratio ** 0.25
