"""Pan/tilt pointing: source selection, search patterns, rate-limited servo commands."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Collection, Mapping, Optional, Union

from .core import AngleOffset, BBox, ParameterError
from .geometry import CameraModel


class ControlSource(str, enum.Enum):
    IR_AND_V = "IRandV"
    IRCAM = "IRcam"
    VCAM = "Vcam"
    FCAM = "Fcam"
    SEARCH = "Search"
    IDLE = "Idle"


PRIORITY = (
    ControlSource.IR_AND_V,
    ControlSource.IRCAM,
    ControlSource.VCAM,
    ControlSource.FCAM,
    ControlSource.SEARCH,
)


def bbox_to_offset(bbox: BBox, cam: CameraModel) -> AngleOffset:
    """Angular offset of a box centre from the image centre (linear mapping).

    Positive azimuth is to the right, positive elevation is up.
    """
    cx, cy = bbox.center
    if not (0 <= cx <= cam.width and 0 <= cy <= cam.height):
        raise ParameterError(f"box centre ({cx}, {cy}) outside {cam.width}x{cam.height} image")
    return AngleOffset(
        (cx - cam.width / 2.0) * cam.hfov / cam.width,
        (cam.height / 2.0 - cy) * cam.vfov / cam.height,
    )


def offset_to_pixel(offset: AngleOffset, cam: CameraModel) -> tuple[float, float]:
    """Inverse of :func:`bbox_to_offset` for a box centre."""
    return (
        cam.width / 2.0 + offset.azimuth_offset * cam.width / cam.hfov,
        cam.height / 2.0 - offset.elevation_offset * cam.height / cam.vfov,
    )


def select_source(
    live: Mapping[ControlSource, bool],
    enabled: Collection[ControlSource],
) -> ControlSource:
    """Highest-priority enabled source that currently has a target.

    ``live`` says which of IRcam, Vcam and Fcam see something this tick.
    IRandV needs both cameras at once; the search program is always live.
    """
    ir = bool(live.get(ControlSource.IRCAM))
    v = bool(live.get(ControlSource.VCAM))
    has_target = {
        ControlSource.IR_AND_V: ir and v,
        ControlSource.IRCAM: ir,
        ControlSource.VCAM: v,
        ControlSource.FCAM: bool(live.get(ControlSource.FCAM)),
        ControlSource.SEARCH: True,
    }
    for src in PRIORITY:
        if src in enabled and has_target[src]:
            return src
    return ControlSource.IDLE


class SearchVariant(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class SearchPattern:
    """Azimuth sweep between the pan limits.

    Variant A holds 10 degrees elevation; variant B alternates 5 and 15
    degrees on successive sweeps.
    """

    variant: SearchVariant = SearchVariant.A
    sweep_rate: float = 15.0
    elevation_a: float = 10.0
    elevations_b: tuple[float, float] = (5.0, 15.0)

    def waypoint(self, t_ms: float, pan_limits, tilt_limits) -> tuple[float, float]:
        lo, hi = pan_limits
        half = (hi - lo) / self.sweep_rate * 1000.0
        if half <= 0:
            pan = lo
            sweep = 0
        else:
            sweep, phase = divmod(t_ms, half)
            frac = phase / half
            pan = lo + frac * (hi - lo) if int(sweep) % 2 == 0 else hi - frac * (hi - lo)
        if SearchVariant(self.variant) is SearchVariant.A:
            tilt = self.elevation_a
        else:
            tilt = self.elevations_b[int(sweep) % 2]
        return _clamp(pan, pan_limits), _clamp(tilt, tilt_limits)

    def period_ms(self, pan_limits) -> float:
        return 2.0 * (pan_limits[1] - pan_limits[0]) / self.sweep_rate * 1000.0


@dataclass(frozen=True)
class PlatformState:
    pan: float = 0.0
    tilt: float = 0.0
    pan_limits: tuple[float, float] = (-45.0, 45.0)
    tilt_limits: tuple[float, float] = (0.0, 45.0)
    servo_power: bool = True
    command_period_ms: int = 200
    max_slew: float = 90.0
    since_command_ms: Optional[int] = None
    search_time_ms: float = 0.0

    def __post_init__(self):
        for lo, hi in (self.pan_limits, self.tilt_limits):
            if lo > hi:
                raise ParameterError("limits must be (low, high)")


@dataclass(frozen=True)
class ServoCommand:
    t: int
    pan: float
    tilt: float
    source: ControlSource

    def to_dict(self) -> dict:
        return {"t": self.t, "pan": self.pan, "tilt": self.tilt, "source": self.source.value}


@dataclass(frozen=True)
class RelativeAim:
    """Move by an offset measured in a narrow-FoV camera image."""

    offset: AngleOffset


@dataclass(frozen=True)
class AbsoluteAim:
    """Point at a direction given relative to the system orientation."""

    pan: float
    tilt: float


@dataclass(frozen=True)
class SearchAim:
    pattern: SearchPattern = SearchPattern()


Request = Union[RelativeAim, AbsoluteAim, SearchAim, None]


def _clamp(v: float, limits) -> float:
    return min(max(v, limits[0]), limits[1])


def servo_tick(
    state: PlatformState,
    request: Request,
    dt_ms: int,
    t: int = 0,
    source: ControlSource = ControlSource.IDLE,
) -> tuple[PlatformState, Optional[ServoCommand]]:
    """Advance the servo loop by ``dt_ms`` and maybe emit a command.

    Commands go out at most once per ``command_period_ms``; each one moves
    at most ``max_slew`` deg/s times the time since the previous command and
    is clamped to the platform limits.
    """
    if dt_ms <= 0:
        raise ParameterError("dt must be positive")
    first = state.since_command_ms is None
    since = dt_ms if first else state.since_command_ms + dt_ms
    search_time = state.search_time_ms
    if isinstance(request, SearchAim):
        state = replace(state, search_time_ms=search_time + dt_ms)
    state = replace(state, since_command_ms=since)

    if request is None or not state.servo_power:
        return state, None
    if not first and since < state.command_period_ms:
        return state, None

    if isinstance(request, RelativeAim):
        want_pan = state.pan + request.offset.azimuth_offset
        want_tilt = state.tilt + request.offset.elevation_offset
    elif isinstance(request, AbsoluteAim):
        want_pan, want_tilt = request.pan, request.tilt
    else:
        want_pan, want_tilt = request.pattern.waypoint(
            search_time, state.pan_limits, state.tilt_limits
        )

    step = state.max_slew * min(since, 1000) / 1000.0
    pan = _clamp(state.pan + _clamp(want_pan - state.pan, (-step, step)), state.pan_limits)
    tilt = _clamp(state.tilt + _clamp(want_tilt - state.tilt, (-step, step)), state.tilt_limits)
    state = replace(state, pan=pan, tilt=tilt, since_command_ms=0)
    return state, ServoCommand(t, pan, tilt, source)


def encode_servo_target(channel: int, degrees: float) -> bytes:
    """Compact-protocol "set target" for a hobby servo controller.

    Pulse width is 1500 us at centre plus 10 us per degree; the target is
    sent in quarter-microseconds as two 7-bit bytes.
    """
    if not 0 <= channel < 24:
        raise ParameterError(f"invalid servo channel {channel}")
    target = int(round(4 * (1500 + 10 * degrees)))
    if not 0 <= target < 1 << 14:
        raise ParameterError(f"angle {degrees} out of servo range")
    return bytes([0x84, channel, target & 0x7F, (target >> 7) & 0x7F])
