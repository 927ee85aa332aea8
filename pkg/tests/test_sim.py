import numpy as np
import pytest

from dronefuse import adsb
from dronefuse.core import BBox, SensorId, TargetClass
from dronefuse.sim import (
    ScenarioError,
    SensorModel,
    TargetSpec,
    VirtualClock,
    Waypoint,
    audio_report,
    camera_view,
    emit_adsb,
    emit_detection,
    fisheye_background,
    fisheye_pixel,
    load_scenario,
    demo_scenario_path,
    render_fisheye_frame,
    rng_stream,
    scenario_from_dict,
    target_state,
)
from dronefuse.core import ParameterError, VISION_CLASSES
from dronefuse.tracking import MultiObjectTracker
from dronefuse.vision import FisheyePipeline
from fixtures import drone, scenario_dict

D = TargetClass.DRONE


def _target(wps, **kw):
    return TargetSpec("t", D, 0.4, tuple(Waypoint(t, e) for t, e in wps), **kw)


def test_target_state_interpolates():
    tg = _target([(0, (0, 0, 0)), (10_000, (100, 0, 0))])
    st = target_state(tg, 5000)
    np.testing.assert_allclose(st.enu, [50, 0, 0])
    np.testing.assert_allclose(st.velocity, [10, 0, 0])
    assert target_state(_target([(1000, (0, 0, 0)), (2000, (1, 0, 0))]), 500) is None
    static = target_state(_target([(3000, (5, 6, 7))]), 99_000)
    np.testing.assert_allclose(static.enu, [5, 6, 7])
    np.testing.assert_allclose(static.velocity, 0)


def test_virtual_clock():
    c = VirtualClock()
    assert c.advance_to(100) == 100 and c.now == 100
    with pytest.raises(ParameterError):
        c.advance_to(50)


def test_rng_streams_are_independent_and_reproducible():
    a1 = rng_stream(1, "IRcam").random(5)
    a2 = rng_stream(1, "IRcam").random(5)
    b = rng_stream(1, "Vcam").random(5)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


def _model(**kw):
    return SensorModel(SensorId.VCAM, 10.0, VISION_CLASSES, **kw)


def test_emit_detection_perfect_and_blind():
    rng = np.random.default_rng(0)
    box = BBox(100, 100, 10, 10)
    m = _model(default_confidence=(0.9, 0.0))
    for _ in range(50):
        d = emit_detection(m, D, "Close", box, rng)
        assert d.cls is D and d.bbox == box and d.confidence == 0.9
    blind = _model(detect_prob={"default": 0.0})
    assert all(emit_detection(blind, D, "Close", box, rng) is None for _ in range(50))


def test_emit_detection_confusion_fraction():
    conf = np.eye(4)
    conf[VISION_CLASSES.index(D)] = [0.0, 0.3, 0.7, 0.0]
    m = _model(confusion={"default": conf})
    rng = rng_stream(42, "confusion-check")
    reps = [emit_detection(m, D, "Medium", BBox(0, 0, 4, 4), rng).cls for _ in range(10_000)]
    frac = sum(r is TargetClass.BIRD for r in reps) / len(reps)
    assert abs(frac - 0.30) <= 0.02


def test_emit_detection_confidence_truncated():
    m = _model(default_confidence=(0.95, 0.3))
    rng = np.random.default_rng(1)
    confs = [emit_detection(m, D, "x", BBox(0, 0, 4, 4), rng).confidence for _ in range(500)]
    assert min(confs) >= 0 and max(confs) <= 1


def test_sensor_model_validation():
    with pytest.raises(ParameterError):
        _model(confusion={"default": np.ones((4, 4))})
    with pytest.raises(ParameterError):
        _model(detect_prob={"Close": 1.2})


def test_scenario_validation_errors():
    with pytest.raises(ScenarioError):
        scenario_from_dict({"schema_version": 2})
    bad = scenario_dict([drone([(0, (1, 1, 1)), (0, (2, 2, 2))])])
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)
    with pytest.raises(ScenarioError):
        scenario_from_dict(scenario_dict(sensors={"Radar": {}}))
    with pytest.raises(ScenarioError):
        scenario_from_dict(scenario_dict(cameras={"Fcam": {"width": 320, "height": 241}}))


def test_demo_scenario_loads():
    scn = load_scenario(demo_scenario_path())
    assert scn.duration_ms == 30_000 and len(scn.targets) >= 3


def test_camera_view_boresight():
    scn = scenario_from_dict(scenario_dict([drone([(0, (0, 20, 0))])]))
    from dronefuse.geometry import SystemPose

    (view,) = camera_view(scn, SensorId.IRCAM, scn.system, 0)
    s, box, b = view
    assert box.center == pytest.approx((160, 128))
    turned = SystemPose(scn.system.position, 0.0, pan=90.0)
    assert camera_view(scn, SensorId.IRCAM, turned, 0) == []


def test_audio_report_radius():
    near = scenario_from_dict(scenario_dict([drone([(0, (0, 20, 0))])]))
    far = scenario_from_dict(scenario_dict([drone([(0, (0, 200, 0))])]))
    rng = np.random.default_rng(0)
    assert audio_report(near, 0, rng).cls is D
    assert audio_report(far, 0, rng).cls is TargetClass.BACKGROUND


def _fisheye_scn(targets):
    return scenario_from_dict(scenario_dict(targets, cameras={"Fcam": {"width": 320, "height": 240}}))


def test_render_background_only():
    scn = _fisheye_scn([])
    np.testing.assert_array_equal(render_fisheye_frame(scn, 0), fisheye_background(scn))


def test_render_disc_at_center():
    scn = _fisheye_scn([drone([(0, (0, 20, 0))], size_m=2.0)])
    frame = render_fisheye_frame(scn, 0)
    diff = np.argwhere(frame != fisheye_background(scn))
    cy, cx = diff.mean(axis=0)
    cam = scn.fisheye.camera
    assert (cx + 0.5, cy + 0.5) == pytest.approx((cam.width / 2, cam.height / 2), abs=1.0)
    assert fisheye_pixel(cam, 0.0, 0.0) == (cam.width / 2, cam.height / 2)


def test_render_motion_per_frame():
    # 20 m away at 5 m/s: at most about 14 deg/s, under 1 px per 33 ms frame
    from dronefuse.sim import sightings

    scn = _fisheye_scn([drone([(0, (-10, 20, 3)), (4, (10, 20, 3))], size_m=1.0)])
    cam = scn.fisheye.camera
    bg = fisheye_background(scn)
    prev = None
    for k in range(120):
        t = int(round(k * 1000 / 30))
        (s,) = sightings(scn, t)
        az = ((s.geometry.azimuth - scn.system.orientation + 180.0) % 360.0) - 180.0
        c = np.array(fisheye_pixel(cam, az, s.geometry.elevation))
        drawn = np.argwhere(render_fisheye_frame(scn, t, bg) != bg).mean(axis=0)[::-1] + 0.5
        assert np.hypot(*(drawn - c)) <= 0.5
        if prev is not None:
            assert np.hypot(*(c - prev)) <= 1.0
        prev = c


def test_fisheye_crossing_is_tracked():
    scn = _fisheye_scn([drone([(0, (-25, 20, 4)), (5, (25, 20, 4))], size_m=0.5)])
    pipe = FisheyePipeline()
    mot = MultiObjectTracker()
    bg = fisheye_background(scn)
    tracked, visible = 0, 0
    ids = set()
    for k in range(150):
        t = int(round(k * 1000 / 30))
        frame = render_fisheye_frame(scn, t, bg)
        best = mot.step(pipe.process(frame), t)
        if k >= 10:  # GMM training
            visible += 1
            if best is not None:
                tracked += 1
                ids.add(best.id)
    assert tracked >= 0.8 * visible
    assert len(ids) <= 2


def test_emit_adsb_counts_and_round_trip():
    tg = {"name": "ac", "class": "Airplane", "size_m": 30,
          "waypoints": [{"t_s": 0, "enu": [5000, 8000, 1500]}, {"t_s": 9.5, "enu": [6000, 8000, 1500]}],
          "adsb": {"icao": "4CA7B1", "callsign": "SAS1457", "category": "Heavy"}}
    scn = scenario_from_dict(scenario_dict([tg]))
    frames = [f for t in range(0, 10_000, 100) for f in emit_adsb(scn, scn.targets[0], t)]
    msgs = [adsb.decode_frame(f) for f in frames]
    assert sum(isinstance(m, adsb.PositionFrame) for m in msgs) == 10
    assert sum(isinstance(m, adsb.Identification) for m in msgs) == 2
    assert [m.odd for m in msgs if isinstance(m, adsb.PositionFrame)] == [False, True] * 5
    from dronefuse.sim import target_geo

    even = adsb.decode_frame(emit_adsb(scn, scn.targets[0], 2000)[0])
    odd = adsb.decode_frame(emit_adsb(scn, scn.targets[0], 3000)[0])
    lat, lon = adsb.cpr_decode_airborne(even, odd, 2000, 3000)
    truth = target_geo(scn, target_state(scn.targets[0], 3000).enu)
    dn = (lat - truth.lat) * 111_195
    de = (lon - truth.lon) * 111_195 * np.cos(np.radians(truth.lat))
    assert np.hypot(dn, de) < 5.1


def test_non_equipped_target_is_silent():
    scn = scenario_from_dict(scenario_dict([drone([(0, (0, 20, 0))])]))
    assert emit_adsb(scn, scn.targets[0], 0) == []
