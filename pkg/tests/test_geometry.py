import math

import pytest
from hypothesis import given, strategies as st

from dronefuse.geometry import (
    FISHEYE_CAMERA,
    IR_CAMERA,
    VIDEO_CAMERA,
    CameraModel,
    DriBin,
    GeoPosition,
    GeometryError,
    NmeaError,
    SystemPose,
    distance_for_pixel_width,
    dri_bin,
    enu_offset,
    fov_contains,
    nmea_checksum,
    offset_position,
    parse_nmea,
    pixel_width,
    radar_range,
    relative_geometry,
)
from dronefuse.core import ParameterError


def sentence(payload):
    return f"${payload}*{nmea_checksum(payload):02X}"


def test_camera_presets():
    assert (IR_CAMERA.hfov, IR_CAMERA.vfov, IR_CAMERA.width, IR_CAMERA.height) == (24, 19, 320, 256)
    assert VIDEO_CAMERA.hfov == 24
    assert FISHEYE_CAMERA.hfov == 180 and FISHEYE_CAMERA.vfov == 90


def test_parse_gga_hand_conversion():
    pos = parse_nmea(sentence("GPGGA,123519,5640.000,N,01250.000,E,1,08,0.9,30.0,M,46.9,M,,"))
    assert pos.lat == pytest.approx(56.6667, abs=1e-4)
    assert pos.lon == pytest.approx(12.8333, abs=1e-4)
    assert pos.alt == 30.0


def test_parse_southern_western_hemispheres():
    pos = parse_nmea(sentence("GPGGA,0,3330.000,S,07030.000,W,1,08,0.9,10.0,M,0,M,,"))
    assert pos.lat == pytest.approx(-33.5) and pos.lon == pytest.approx(-70.5)


def test_parse_rejects_bad_checksum():
    good = sentence("GPGGA,123519,5640.000,N,01250.000,E,1,08,0.9,30.0,M,46.9,M,,")
    bad = good[:-2] + ("00" if good[-2:] != "00" else "01")
    with pytest.raises(NmeaError):
        parse_nmea(bad)


def test_rmc_void_is_no_fix():
    assert parse_nmea(sentence("GPRMC,123519,V,5640.000,N,01250.000,E,0.0,0.0,230394,,")) is None


def test_rmc_active_parses_without_altitude():
    pos = parse_nmea(sentence("GPRMC,123519,A,5640.000,N,01250.000,E,0.0,0.0,230394,,"))
    assert pos.lat == pytest.approx(56 + 40 / 60) and pos.alt == 0.0


def test_gga_fix_quality_zero_is_no_fix():
    assert parse_nmea(sentence("GPGGA,123519,5640.000,N,01250.000,E,0,00,,,M,,M,,")) is None


def test_unsupported_sentence():
    with pytest.raises(NmeaError):
        parse_nmea(sentence("GPGSV,1,1,00"))


SYS = SystemPose(GeoPosition(56.67, 12.86, 0.0))


def test_due_north_same_altitude():
    g = relative_geometry(SYS, GeoPosition(56.68, 12.86, 0.0))
    assert g.azimuth == pytest.approx(0.0, abs=1e-9)
    assert g.elevation == 0.0


def test_pythagoras_sloping_distance():
    tgt = offset_position(SYS.position, 30000.0, 0.0, 10000.0)
    g = relative_geometry(SYS, tgt)
    assert g.horizontal_distance == pytest.approx(30000.0, abs=1e-6)
    assert g.sloping_distance == pytest.approx(31622.8, abs=0.05)
    assert g.azimuth == pytest.approx(90.0)


def test_far_airplane_still_resolves():
    # 35 km+ sloping distance still yields finite geometry
    tgt = offset_position(SYS.position, -20000.0, 28000.0, 11000.0)
    g = relative_geometry(SYS, tgt)
    assert g.sloping_distance > 35000.0
    assert 0 <= g.azimuth < 360 and -90 <= g.elevation <= 90


def test_coincident_points_raise():
    with pytest.raises(GeometryError):
        relative_geometry(SYS, SYS.position)


@given(
    st.floats(-60, 60),
    st.floats(-179, 179),
    st.floats(-35000, 35000),
    st.floats(-35000, 35000),
    st.floats(-1000, 12000),
)
def test_enu_round_trip(lat, lon, e, n, u):
    origin = GeoPosition(lat, lon, 100.0)
    tgt = offset_position(origin, e, n, u)
    de, dn, du = enu_offset(origin, tgt)
    back = offset_position(origin, de, dn, du)
    assert back.lat == pytest.approx(tgt.lat, abs=1e-6)
    assert back.lon == pytest.approx(tgt.lon, abs=1e-6)
    assert de == pytest.approx(e, abs=1e-6) and dn == pytest.approx(n, abs=1e-6)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_angles_in_range(e, n, u):
    if abs(e) + abs(n) + abs(u) < 1e-3:
        return
    g = relative_geometry(SYS, offset_position(SYS.position, e, n, u))
    assert 0.0 <= g.azimuth < 360.0
    assert -90.0 <= g.elevation <= 90.0


def test_fov_boresight_and_edges():
    pose = SystemPose(SYS.position, orientation=200.0, pan=10.0, tilt=5.0)
    inside, off = fov_contains(pose, IR_CAMERA, 210.0, 5.0)
    assert inside and off.azimuth_offset == 0.0 and off.elevation_offset == 0.0
    inside, off = fov_contains(pose, IR_CAMERA, 222.0, 5.0)
    assert inside and off.azimuth_offset == pytest.approx(12.0)
    inside, _ = fov_contains(pose, IR_CAMERA, 223.0, 5.0)
    assert not inside
    inside, _ = fov_contains(pose, IR_CAMERA, 210.0, 5.0 + 9.6)
    assert not inside


def test_fov_wraps_through_north():
    pose = SystemPose(SYS.position, orientation=355.0)
    inside, off = fov_contains(pose, IR_CAMERA, 3.0, 0.0)
    assert inside and off.azimuth_offset == pytest.approx(8.0)


def test_pixel_width_dri_boundaries():
    assert pixel_width(0.4, 20.06, IR_CAMERA) == pytest.approx(15.0, abs=0.01)
    assert pixel_width(0.4, 60.2, IR_CAMERA) == pytest.approx(5.0, abs=0.01)
    assert distance_for_pixel_width(0.4, 15, IR_CAMERA) == pytest.approx(20.1, abs=0.1)
    assert distance_for_pixel_width(0.4, 5, IR_CAMERA) == pytest.approx(60.2, abs=0.1)


def test_pixel_width_inverse_proportional():
    assert pixel_width(0.4, 40, IR_CAMERA) == pytest.approx(pixel_width(0.4, 20, IR_CAMERA) / 2)


def test_pixel_width_rejects_bad_distance():
    with pytest.raises(ParameterError):
        pixel_width(0.4, 0.0, IR_CAMERA)


@pytest.mark.parametrize("px,expected", [(15.0, DriBin.CLOSE), (5.0, DriBin.MEDIUM), (4.99, DriBin.DISTANT),
                                         (14.999, DriBin.MEDIUM), (0.0, DriBin.DISTANT)])
def test_dri_bin_boundaries(px, expected):
    assert dri_bin(px) is expected


def test_dri_bin_monotone_in_distance():
    order = {DriBin.CLOSE: 0, DriBin.MEDIUM: 1, DriBin.DISTANT: 2}
    prev = 0
    for d in [x * 0.5 for x in range(1, 400)]:
        b = order[dri_bin(pixel_width(0.4, d, IR_CAMERA))]
        assert b >= prev
        prev = b


def test_radar_range_values():
    assert radar_range(100, 0.02) == pytest.approx(37.6, abs=0.05)
    assert radar_range(100, 0.0002) == pytest.approx(11.9, abs=0.05)
    assert radar_range(100, 1) == 100


@pytest.mark.parametrize("r,k", [(0, 1), (100, 0), (-1, 0.5)])
def test_radar_range_rejects(r, k):
    with pytest.raises(ParameterError):
        radar_range(r, k)


def test_camera_model_validation():
    with pytest.raises(ParameterError):
        CameraModel(0, 10, 10, 10)
    with pytest.raises(ParameterError):
        SystemPose(SYS.position, orientation=360.0)
