import pytest
from hypothesis import given, settings, strategies as st

from dronefuse.core import AngleOffset, BBox, ParameterError
from dronefuse.geometry import IR_CAMERA, VIDEO_CAMERA
from dronefuse.platform import (
    AbsoluteAim,
    ControlSource,
    PlatformState,
    RelativeAim,
    SearchAim,
    SearchPattern,
    SearchVariant,
    bbox_to_offset,
    encode_servo_target,
    offset_to_pixel,
    select_source,
    servo_tick,
)

ALL_SOURCES = [ControlSource.IR_AND_V, ControlSource.IRCAM, ControlSource.VCAM, ControlSource.FCAM,
               ControlSource.SEARCH]


def _centered(cx, cy, w=4.0, h=4.0):
    return BBox(cx - w / 2, cy - h / 2, w, h)


def test_bbox_to_offset_examples():
    assert bbox_to_offset(_centered(160, 128), IR_CAMERA) == AngleOffset(0.0, 0.0)
    assert bbox_to_offset(_centered(320, 128), IR_CAMERA).azimuth_offset == pytest.approx(12.0)
    off = bbox_to_offset(_centered(160, 0), IR_CAMERA)
    assert (off.azimuth_offset, off.elevation_offset) == pytest.approx((0.0, 9.5))


def test_bbox_outside_image_rejected():
    with pytest.raises(ParameterError):
        bbox_to_offset(_centered(400, 100), IR_CAMERA)


@given(st.floats(0, 640), st.floats(0, 512))
def test_offset_pixel_round_trip(cx, cy):
    off = bbox_to_offset(_centered(cx, cy), VIDEO_CAMERA)
    assert offset_to_pixel(off, VIDEO_CAMERA) == pytest.approx((cx, cy), abs=1e-9)


def test_select_source_priority():
    live = {ControlSource.FCAM: True, ControlSource.IRCAM: True}
    assert select_source(live, ALL_SOURCES) is ControlSource.IRCAM
    assert select_source({ControlSource.FCAM: True}, ALL_SOURCES) is ControlSource.FCAM
    assert select_source({}, ALL_SOURCES) is ControlSource.SEARCH
    assert select_source({}, [ControlSource.IRCAM]) is ControlSource.IDLE
    both = {ControlSource.IRCAM: True, ControlSource.VCAM: True}
    assert select_source(both, ALL_SOURCES) is ControlSource.IR_AND_V
    only_pair = [ControlSource.IR_AND_V]
    assert select_source({ControlSource.IRCAM: True}, only_pair) is ControlSource.IDLE
    assert select_source({ControlSource.VCAM: True}, ALL_SOURCES[2:]) is ControlSource.VCAM


def test_rate_limit_one_command_per_period():
    s = PlatformState()
    s, c1 = servo_tick(s, AbsoluteAim(5, 5), 100, t=100)
    s, c2 = servo_tick(s, AbsoluteAim(5, 5), 100, t=200)
    assert c1 is not None and c2 is None
    s, c3 = servo_tick(s, AbsoluteAim(5, 5), 100, t=300)
    assert c3 is not None


def test_five_hz_over_ten_seconds():
    s = PlatformState()
    n = 0
    for k in range(100):
        s, c = servo_tick(s, AbsoluteAim(0, 10), 100, t=100 * k)
        n += c is not None
    assert n == 50


def test_relative_aim_clamped_at_limit():
    s = PlatformState(pan=40.0, tilt=10.0)
    s, c = servo_tick(s, RelativeAim(AngleOffset(12.0, 0.0)), 100)
    assert c.pan == 45.0 and c.tilt == 10.0


def test_slew_rate_limit():
    s = PlatformState(max_slew=20.0)
    s, _ = servo_tick(s, None, 100)
    s, c = servo_tick(s, AbsoluteAim(45, 0), 100)
    assert c.pan == pytest.approx(4.0)


def test_no_command_without_power_or_request():
    s, c = servo_tick(PlatformState(servo_power=False), AbsoluteAim(5, 5), 100)
    assert c is None
    s, c = servo_tick(PlatformState(), None, 100)
    assert c is None
    with pytest.raises(ParameterError):
        servo_tick(PlatformState(), None, 0)


def test_search_a_full_period():
    pat = SearchPattern(SearchVariant.A, sweep_rate=15.0)
    s = PlatformState(pan=-45.0, tilt=10.0)
    pans, tilts = [], []
    period = pat.period_ms(s.pan_limits)
    for k in range(int(period // 100) + 1):
        s, c = servo_tick(s, SearchAim(pat), 100, t=100 * k)
        if c is not None:
            pans.append(c.pan)
            tilts.append(c.tilt)
    assert min(pans) == -45.0 and max(pans) == 45.0
    assert set(tilts) == {10.0}


def test_search_b_alternates_elevation():
    pat = SearchPattern(SearchVariant.B)
    half = (90.0 / pat.sweep_rate) * 1000
    assert pat.waypoint(0, (-45, 45), (0, 45))[1] == 5.0
    assert pat.waypoint(half + 1, (-45, 45), (0, 45))[1] == 15.0
    assert pat.waypoint(2 * half + 1, (-45, 45), (0, 45))[1] == 5.0


def test_invalid_limits():
    with pytest.raises(ParameterError):
        PlatformState(pan_limits=(10, -10))


aims = st.one_of(
    st.builds(lambda a, e: RelativeAim(AngleOffset(a, e)), st.floats(-90, 90), st.floats(-90, 90)),
    st.builds(AbsoluteAim, st.floats(-200, 200), st.floats(-200, 200)),
    st.just(SearchAim()),
    st.none(),
)


@settings(max_examples=80)
@given(st.lists(st.tuples(aims, st.integers(1, 500)), max_size=40))
def test_commands_stay_within_limits(seq):
    s = PlatformState(pan_limits=(-60, 30), tilt_limits=(-5, 40))
    for aim, dt in seq:
        s, c = servo_tick(s, aim, dt)
        if c is not None:
            assert -60 <= c.pan <= 30 and -5 <= c.tilt <= 40


def test_servo_encoding():
    assert encode_servo_target(0, 0.0) == bytes([0x84, 0, 0x70, 0x2E])
    raw = encode_servo_target(1, 45.0)
    target = raw[2] | (raw[3] << 7)
    assert target == 4 * (1500 + 450)
    with pytest.raises(ParameterError):
        encode_servo_target(30, 0)
    with pytest.raises(ParameterError):
        encode_servo_target(0, 500)
