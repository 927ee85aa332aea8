"""Mode S extended squitter (DF17) decoding and the ADS-B worker's queues.

Covers CRC-24 parity, aircraft identification and emitter category,
airborne position via Compact Position Reporting (CPR), and airborne
velocity. Encoders for the same messages exist so the simulator can emit
valid frames and tests can round-trip them.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .core import ParameterError, TargetClass
from .geometry import FT_TO_M, GeoPosition, SystemPose, relative_geometry

GENERATOR = 0xFFF409
NZ = 15
CPR_BITS = 17
CPR_SCALE = 1 << CPR_BITS
MAX_PAIR_AGE_MS = 10_000

CHARSET = "#ABCDEFGHIJKLMNOPQRSTUVWXYZ##### ###############0123456789######"


class AdsbError(ValueError):
    pass


class CprError(AdsbError):
    pass


class CprNoFixError(CprError):
    """Even and odd frames fall in different longitude zone bands."""


class CprStaleError(CprError):
    """Even and odd frames are too far apart in time."""


# --- bits and parity -------------------------------------------------------


def parse_hex(hexstr: str) -> bytes:
    s = hexstr.strip().replace(" ", "")
    if s.startswith("*") and s.endswith(";"):
        s = s[1:-1]
    try:
        data = bytes.fromhex(s)
    except ValueError as exc:
        raise AdsbError(f"malformed hex frame {hexstr!r}") from exc
    if len(data) != 14:
        raise AdsbError(f"expected a 112-bit frame, got {len(data) * 8} bits")
    return data


def crc24(data: bytes) -> int:
    """CRC-24 remainder of ``data`` under the Mode S generator polynomial."""
    crc = 0
    for byte in data:
        crc ^= byte << 16
        for _ in range(8):
            crc <<= 1
            if crc & 0x1000000:
                crc ^= 0x1000000 | GENERATOR
    return crc & 0xFFFFFF


def parity(data: bytes) -> int:
    return int.from_bytes(data[-3:], "big")


def crc_ok(frame: Union[bytes, str]) -> bool:
    """Accept a frame iff the parity field equals the CRC of the first 88 bits.

    All-zero frames satisfy the polynomial trivially and are produced by
    stuck receivers, so they are rejected outright.
    """
    data = parse_hex(frame) if isinstance(frame, str) else bytes(frame)
    if len(data) != 14 or not any(data):
        return False
    return crc24(data[:11]) == parity(data)


def with_parity(data88: bytes) -> bytes:
    return data88 + crc24(data88).to_bytes(3, "big")


def _bits(value: int, start: int, length: int, total: int = 56) -> int:
    """Field at 1-based ``start`` from an integer holding ``total`` bits."""
    return (value >> (total - start - length + 1)) & ((1 << length) - 1)


def downlink_format(data: bytes) -> int:
    return data[0] >> 3


def icao_of(data: bytes) -> str:
    return data[1:4].hex().upper()


def me_field(data: bytes) -> int:
    return int.from_bytes(data[4:11], "big")


def typecode(data: bytes) -> int:
    return data[4] >> 3


# --- emitter category ------------------------------------------------------


class VehicleCategory(str, enum.Enum):
    NONE = "None"
    LIGHT = "Light"
    MEDIUM = "Medium"
    HEAVY = "Heavy"
    HIGH_VORTEX = "HighVortex"
    VERY_HEAVY = "VeryHeavy"
    HIGH_PERFORMANCE = "HighPerformanceHighSpeed"
    ROTORCRAFT = "Rotorcraft"
    GLIDER = "Glider"
    LIGHTER_THAN_AIR = "LighterThanAir"
    PARACHUTIST = "Parachutist"
    ULTRALIGHT = "Ultralight"
    UAV = "UAV"
    SPACE = "Space"
    SURFACE_EMERGENCY = "SurfaceEmergency"
    SURFACE_SERVICE = "SurfaceService"
    OBSTACLE = "Obstacle"
    RESERVED = "Reserved"


# (type code, category code) -> category; category code 0 means "no information".
_CATEGORY_TABLE = {
    (4, 1): VehicleCategory.LIGHT,
    (4, 2): VehicleCategory.MEDIUM,
    (4, 3): VehicleCategory.HEAVY,
    (4, 4): VehicleCategory.HIGH_VORTEX,
    (4, 5): VehicleCategory.VERY_HEAVY,
    (4, 6): VehicleCategory.HIGH_PERFORMANCE,
    (4, 7): VehicleCategory.ROTORCRAFT,
    (3, 1): VehicleCategory.GLIDER,
    (3, 2): VehicleCategory.LIGHTER_THAN_AIR,
    (3, 3): VehicleCategory.PARACHUTIST,
    (3, 4): VehicleCategory.ULTRALIGHT,
    (3, 6): VehicleCategory.UAV,
    (3, 7): VehicleCategory.SPACE,
    (2, 1): VehicleCategory.SURFACE_EMERGENCY,
    (2, 3): VehicleCategory.SURFACE_SERVICE,
    (2, 4): VehicleCategory.OBSTACLE,
    (2, 5): VehicleCategory.OBSTACLE,
    (2, 6): VehicleCategory.OBSTACLE,
    (2, 7): VehicleCategory.OBSTACLE,
}
_CATEGORY_CODES = {cat: key for key, cat in _CATEGORY_TABLE.items()}


def lookup_category(tc: int, ca: int) -> VehicleCategory:
    if ca == 0:
        return VehicleCategory.NONE
    return _CATEGORY_TABLE.get((tc, ca), VehicleCategory.RESERVED)


def category_to_class(cat: VehicleCategory) -> tuple[TargetClass, float]:
    """Map an emitter category onto the system's class set.

    Without category information the target is assumed to be an airplane at
    reduced confidence, leaving room for the other sensors to outvote it.
    """
    cat = VehicleCategory(cat)
    if cat is VehicleCategory.NONE:
        return TargetClass.AIRPLANE, 0.75
    if cat is VehicleCategory.ROTORCRAFT:
        return TargetClass.HELICOPTER, 1.0
    if cat is VehicleCategory.UAV:
        return TargetClass.DRONE, 1.0
    return TargetClass.AIRPLANE, 1.0


# --- message payloads ------------------------------------------------------


@dataclass(frozen=True)
class Identification:
    icao: str
    callsign: str
    category: VehicleCategory
    valid_chars: bool = True


@dataclass(frozen=True)
class PositionFrame:
    icao: str
    odd: bool
    lat_cpr: int
    lon_cpr: int
    altitude_ft: Optional[int]


@dataclass(frozen=True)
class Velocity:
    icao: str
    subtype: int
    ground_speed_kt: Optional[float]
    track_deg: Optional[float]
    vertical_rate_fpm: Optional[int]
    raw: int = 0


Message = Union[Identification, PositionFrame, Velocity]


def decode_identification(me: int, icao: str = "") -> Identification:
    tc = _bits(me, 1, 5)
    if not 1 <= tc <= 4:
        raise AdsbError(f"type code {tc} is not an identification message")
    ca = _bits(me, 6, 3)
    chars = [CHARSET[_bits(me, 9 + 6 * i, 6)] for i in range(8)]
    callsign = "".join(chars).rstrip()
    return Identification(icao, callsign, lookup_category(tc, ca), "#" not in callsign)


def decode_altitude(field12: int) -> Optional[int]:
    """Barometric altitude in feet; only the 25 ft (Q=1) encoding is supported."""
    if field12 == 0:
        return None
    if not field12 & 0x10:
        return None
    n = ((field12 & 0xFE0) >> 1) | (field12 & 0x0F)
    return n * 25 - 1000


def encode_altitude(alt_ft: float) -> int:
    n = int(round((alt_ft + 1000) / 25))
    if not 0 <= n < 2048:
        raise ParameterError(f"altitude {alt_ft} ft outside the 25 ft encoding range")
    return ((n & 0x7F0) << 1) | 0x10 | (n & 0x0F)


def decode_position(me: int, icao: str = "") -> PositionFrame:
    tc = _bits(me, 1, 5)
    if not (9 <= tc <= 18 or 20 <= tc <= 22):
        raise AdsbError(f"type code {tc} is not an airborne position message")
    alt_field = _bits(me, 9, 12)
    if tc >= 20:
        alt = int(round(alt_field / FT_TO_M)) if alt_field else None
    else:
        alt = decode_altitude(alt_field)
    return PositionFrame(
        icao,
        bool(_bits(me, 22, 1)),
        _bits(me, 23, 17),
        _bits(me, 40, 17),
        alt,
    )


def decode_velocity(me: int, icao: str = "") -> Velocity:
    """Airborne velocity; ground-speed subtypes 1 and 2 are fully decoded."""
    if _bits(me, 1, 5) != 19:
        raise AdsbError("not a velocity message")
    st = _bits(me, 6, 3)
    vr_raw = _bits(me, 38, 9)
    vr = None if vr_raw == 0 else (vr_raw - 1) * 64 * (-1 if _bits(me, 37, 1) else 1)
    if st in (1, 2):
        scale = 1 if st == 1 else 4
        v_ew, v_ns = _bits(me, 15, 10), _bits(me, 26, 10)
        if v_ew == 0 or v_ns == 0:
            return Velocity(icao, st, None, None, vr, me)
        vx = (v_ew - 1) * scale * (-1 if _bits(me, 14, 1) else 1)
        vy = (v_ns - 1) * scale * (-1 if _bits(me, 25, 1) else 1)
        speed = math.hypot(vx, vy)
        track = math.degrees(math.atan2(vx, vy)) % 360.0
        return Velocity(icao, st, speed, track, vr, me)
    return Velocity(icao, st, None, None, vr, me)


def decode_frame(frame: Union[str, bytes]) -> Optional[Message]:
    """Decode one DF17 frame; returns ``None`` for unsupported messages.

    Raises :class:`AdsbError` when the frame fails parity.
    """
    data = parse_hex(frame) if isinstance(frame, str) else bytes(frame)
    if not crc_ok(data):
        raise AdsbError("CRC check failed")
    if downlink_format(data) != 17:
        return None
    icao, me, tc = icao_of(data), me_field(data), typecode(data)
    if 1 <= tc <= 4:
        return decode_identification(me, icao)
    if 9 <= tc <= 18 or 20 <= tc <= 22:
        return decode_position(me, icao)
    if tc == 19:
        return decode_velocity(me, icao)
    return None


# --- CPR -------------------------------------------------------------------


def cpr_nl(lat: float) -> int:
    """Number of longitude zones at latitude ``lat``."""
    if lat == 0:
        return 59
    alat = abs(lat)
    if alat == 87:
        return 2
    if alat > 87:
        return 1
    a = 1 - math.cos(math.pi / (2 * NZ))
    b = math.cos(math.radians(alat)) ** 2
    return int(math.floor(2 * math.pi / math.acos(1 - a / b)))


def _mod(a: float, b: float) -> float:
    return a - b * math.floor(a / b)


def cpr_encode(lat: float, lon: float, odd: bool) -> tuple[int, int]:
    i = 1 if odd else 0
    dlat = 360.0 / (4 * NZ - i)
    yz = math.floor(CPR_SCALE * _mod(lat, dlat) / dlat + 0.5)
    rlat = dlat * (yz / CPR_SCALE + math.floor(lat / dlat))
    nl = cpr_nl(rlat)
    dlon = 360.0 / max(nl - i, 1)
    xz = math.floor(CPR_SCALE * _mod(lon, dlon) / dlon + 0.5)
    return yz % CPR_SCALE, xz % CPR_SCALE


def cpr_decode_airborne(
    even: PositionFrame, odd: PositionFrame, t_even: int, t_odd: int
) -> tuple[float, float]:
    """Globally unambiguous position from an even/odd pair (times in ms).

    The more recent frame selects which solution is returned.
    """
    if abs(t_even - t_odd) > MAX_PAIR_AGE_MS:
        raise CprStaleError(f"pair is {abs(t_even - t_odd)} ms apart")
    le, lo = even.lat_cpr / CPR_SCALE, odd.lat_cpr / CPR_SCALE
    j = math.floor(59 * le - 60 * lo + 0.5)
    lat_e = (360.0 / 60) * (_mod(j, 60) + le)
    lat_o = (360.0 / 59) * (_mod(j, 59) + lo)
    if lat_e >= 270:
        lat_e -= 360
    if lat_o >= 270:
        lat_o -= 360
    if not (-90 <= lat_e <= 90 and -90 <= lat_o <= 90):
        raise CprNoFixError("latitude out of range")
    nl = cpr_nl(lat_e)
    if nl != cpr_nl(lat_o):
        raise CprNoFixError("even and odd frames straddle a zone boundary")

    ge, go = even.lon_cpr / CPR_SCALE, odd.lon_cpr / CPR_SCALE
    m = math.floor(ge * (nl - 1) - go * nl + 0.5)
    if t_even >= t_odd:
        ni = max(nl, 1)
        lat, lon = lat_e, (360.0 / ni) * (_mod(m, ni) + ge)
    else:
        ni = max(nl - 1, 1)
        lat, lon = lat_o, (360.0 / ni) * (_mod(m, ni) + go)
    if lon >= 180:
        lon -= 360
    return lat, lon


def cpr_decode_local(frame: PositionFrame, ref_lat: float, ref_lon: float) -> tuple[float, float]:
    """Decode a single frame against a reference within half a zone."""
    i = 1 if frame.odd else 0
    dlat = 360.0 / (4 * NZ - i)
    yz = frame.lat_cpr / CPR_SCALE
    j = math.floor(ref_lat / dlat) + math.floor(_mod(ref_lat, dlat) / dlat - yz + 0.5)
    lat = dlat * (j + yz)
    dlon = 360.0 / max(cpr_nl(lat) - i, 1)
    xz = frame.lon_cpr / CPR_SCALE
    m = math.floor(ref_lon / dlon) + math.floor(_mod(ref_lon, dlon) / dlon - xz + 0.5)
    lon = dlon * (m + xz)
    if lon >= 180:
        lon -= 360
    return lat, lon


# --- encoders (test vectors and simulator) ---------------------------------


def _df17(icao: str, me: int, ca: int = 5) -> str:
    head = bytes([(17 << 3) | ca]) + bytes.fromhex(icao)
    return with_parity(head + me.to_bytes(7, "big")).hex().upper()


def encode_identification(icao: str, callsign: str, category: VehicleCategory) -> str:
    cat = VehicleCategory(category)
    tc, ca = _CATEGORY_CODES.get(cat, (4, 0))
    me = (tc << 51) | (ca << 48)
    text = callsign.upper().ljust(8)[:8]
    for i, ch in enumerate(text):
        idx = CHARSET.find(ch)
        if idx <= 0 or (ch == "#"):
            raise ParameterError(f"character {ch!r} cannot be encoded")
        me |= idx << (42 - 6 * i)
    return _df17(icao, me)


def encode_position(icao: str, lat: float, lon: float, alt_ft: float, odd: bool, tc: int = 11) -> str:
    yz, xz = cpr_encode(lat, lon, odd)
    me = (tc << 51) | (encode_altitude(alt_ft) << 36) | (int(odd) << 34) | (yz << 17) | xz
    return _df17(icao, me)


def encode_velocity(icao: str, v_east_kt: float, v_north_kt: float, vr_fpm: float = 0.0) -> str:
    ew, ns = int(round(v_east_kt)), int(round(v_north_kt))
    vr = int(round(abs(vr_fpm) / 64))
    me = (19 << 51) | (1 << 48)
    me |= (int(ew < 0) << 42) | ((min(abs(ew), 1022) + 1) << 32)
    me |= (int(ns < 0) << 31) | ((min(abs(ns), 1022) + 1) << 21)
    me |= (int(vr_fpm < 0) << 19) | ((min(vr, 510) + 1) << 10)
    return _df17(icao, me)


# --- worker queues ---------------------------------------------------------


@dataclass(frozen=True)
class AircraftTrackEntry:
    icao: str
    last_seen: int
    callsign: Optional[str] = None
    position: Optional[tuple[float, float]] = None
    position_t: Optional[int] = None
    altitude_ft: Optional[float] = None
    distance: Optional[float] = None
    horizontal_distance: Optional[float] = None
    azimuth: Optional[float] = None
    elevation: Optional[float] = None
    category: VehicleCategory = VehicleCategory.NONE
    category_received: bool = False
    cls: TargetClass = TargetClass.AIRPLANE
    confidence: float = 0.75
    ground_speed_kt: Optional[float] = None
    track_deg: Optional[float] = None
    vertical_rate_fpm: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "icao": self.icao,
            "last_seen": self.last_seen,
            "callsign": self.callsign,
            "lat": None if self.position is None else self.position[0],
            "lon": None if self.position is None else self.position[1],
            "altitude_ft": self.altitude_ft,
            "distance": self.distance,
            "horizontal_distance": self.horizontal_distance,
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "category": self.category.value,
            "class": self.cls.value,
            "confidence": self.confidence,
            "ground_speed_kt": self.ground_speed_kt,
            "track_deg": self.track_deg,
            "vertical_rate_fpm": self.vertical_rate_fpm,
        }


@dataclass(frozen=True)
class HistoryPoint:
    icao: str
    t: int
    lat: float
    lon: float
    altitude_ft: Optional[float]


@dataclass
class AdsbQueues:
    """Current aircraft plus a bounded per-aircraft history of past positions."""

    expiry_ms: int = 60_000
    history_cap: int = 500
    current: dict[str, AircraftTrackEntry] = field(default_factory=dict)
    _history: dict[str, deque] = field(default_factory=dict)
    _last_pos: dict[tuple[str, bool], tuple[PositionFrame, int]] = field(default_factory=dict)
    no_fix: int = 0

    @property
    def history(self) -> list[HistoryPoint]:
        pts = [p for dq in self._history.values() for p in dq]
        return sorted(pts, key=lambda p: (p.t, p.icao))

    def history_for(self, icao: str) -> list[HistoryPoint]:
        return list(self._history.get(icao, ()))

    def snapshot(self) -> list[AircraftTrackEntry]:
        return [self.current[k] for k in sorted(self.current)]

    def expire(self, t: int) -> None:
        for icao in [k for k, e in self.current.items() if t - e.last_seen > self.expiry_ms]:
            del self.current[icao]
            self._last_pos.pop((icao, False), None)
            self._last_pos.pop((icao, True), None)

    def _resolve(self, msg: PositionFrame, t: int, prev: Optional[AircraftTrackEntry]):
        other = self._last_pos.get((msg.icao, not msg.odd))
        if other is not None:
            frame, t_other = other
            even, odd = (frame, msg) if msg.odd else (msg, frame)
            t_even, t_odd = (t_other, t) if msg.odd else (t, t_other)
            try:
                return cpr_decode_airborne(even, odd, t_even, t_odd)
            except CprError:
                self.no_fix += 1
        if prev is not None and prev.position is not None:
            return cpr_decode_local(msg, *prev.position)
        return None


def update_queues(queues: AdsbQueues, msg: Message, system: SystemPose, t: int) -> AdsbQueues:
    """Fold one decoded message into the queues (mutated and returned)."""
    queues.expire(t)
    prev = queues.current.get(msg.icao)
    entry = prev if prev is not None else AircraftTrackEntry(msg.icao, t)
    entry = replace(entry, last_seen=t)

    if isinstance(msg, Identification):
        received = msg.category is not VehicleCategory.NONE
        cls, conf = category_to_class(msg.category)
        entry = replace(
            entry,
            callsign=msg.callsign,
            category=msg.category,
            category_received=received,
            cls=cls,
            confidence=conf,
        )
    elif isinstance(msg, Velocity):
        entry = replace(
            entry,
            ground_speed_kt=msg.ground_speed_kt,
            track_deg=msg.track_deg,
            vertical_rate_fpm=msg.vertical_rate_fpm,
        )
    elif isinstance(msg, PositionFrame):
        latlon = queues._resolve(msg, t, prev)
        queues._last_pos[(msg.icao, msg.odd)] = (msg, t)
        if latlon is not None:
            if prev is not None and prev.position is not None:
                dq = queues._history.setdefault(msg.icao, deque(maxlen=queues.history_cap))
                dq.append(HistoryPoint(msg.icao, prev.position_t, *prev.position, prev.altitude_ft))
            alt_ft = msg.altitude_ft if msg.altitude_ft is not None else entry.altitude_ft
            target = GeoPosition(latlon[0], latlon[1], (alt_ft or 0.0) * FT_TO_M)
            geo = relative_geometry(system, target)
            entry = replace(
                entry,
                position=latlon,
                position_t=t,
                altitude_ft=alt_ft,
                distance=geo.sloping_distance,
                horizontal_distance=geo.horizontal_distance,
                azimuth=geo.azimuth,
                elevation=geo.elevation,
            )
    queues.current[msg.icao] = entry
    return queues
