import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dronefuse.core import ParameterError, SensorId, TargetClass
from dronefuse.fusion import (
    FUSION_SENSORS,
    FusionConfig,
    FusionState,
    PollRecord,
    count_events,
    fusion_replay,
    fusion_step,
    ingest,
)
from fixtures import det, dropout_log, false_alarm_log, single_sensor_ticks

IR, V, AU, ADSB = SensorId.IRCAM, SensorId.VCAM, SensorId.AUDIO, SensorId.ADSB
ALL = [TargetClass.AIRPLANE, TargetClass.BIRD, TargetClass.DRONE, TargetClass.HELICOPTER]


def only(*sensors, **kw):
    return FusionConfig(include={s: s in sensors for s in FUSION_SENSORS}, **kw)


def test_ingest_examples():
    cfg = FusionConfig(weight={V: 0.5})
    m = ingest(None, {IR: det(IR, "Drone", 0.9, 0)}, cfg)
    np.testing.assert_array_equal(m.values[0], [0, 0, 0.9, 0])
    m = ingest(None, {AU: det(AU, "Background", 0.99, 0)}, cfg)
    assert not m.values.any() and not m.detecting.any()
    m = ingest(None, {V: det(V, "Bird", 0.6, 0)}, cfg)
    np.testing.assert_allclose(m.values[1], [0, 0.3, 0, 0])


def test_ingest_nodata_is_zero_row():
    m = ingest(None, {ADSB: det(ADSB, "NoData", 0.0, 0)}, FusionConfig())
    assert not m.values.any()


def test_ingest_excluded_sensor_counted():
    m = ingest(None, {IR: det(IR, "Drone", 0.9, 0), V: det(V, "Drone", 0.9, 0)}, only(V))
    assert m.ignored == 1
    assert not m.values[0].any() and m.values[1, 2] == 0.9


def test_ingest_rejects_fcam():
    with pytest.raises(ParameterError):
        ingest(None, {SensorId.FCAM: det(AU, "Drone", 0.5, 0)}, FusionConfig())


def test_config_validation():
    with pytest.raises(ParameterError):
        FusionConfig(include={s: False for s in FUSION_SENSORS})
    with pytest.raises(ParameterError):
        FusionConfig(weight={IR: float("nan")})
    with pytest.raises(ParameterError):
        FusionConfig(weight={IR: 1.5})
    with pytest.raises(ParameterError):
        FusionConfig(min_sensors=0)
    cfg = FusionConfig.from_dict({"include": {"IRcam": True}, "weights": {"Audio": 0.8}, "min_sensors": 2})
    assert cfg.included == (IR,) and cfg.weight[AU] == 0.8 and cfg.min_sensors == 2


def test_sustained_single_sensor():
    cfg = only(IR)
    recs = [PollRecord(100 * k, {IR: det(IR, "Drone", 0.9, 100 * k)}) for k in range(10)]
    out = fusion_replay(recs, cfg)
    assert out[-1].cls is TargetClass.DRONE
    assert out[-1].confidence == pytest.approx(0.9)
    # warm-up is normalised by the full window
    assert out[0].confidence == pytest.approx(0.09)


def test_min_sensors_gate():
    cfg = only(IR, V, min_sensors=2)
    _, out = fusion_step(FusionState.for_config(cfg), ingest(None, {IR: det(IR, "Drone", 0.9, 0)}, cfg), cfg)
    assert out.cls is None and out.sensors_detecting == 1


def test_empty_window():
    cfg = FusionConfig()
    _, out = fusion_step(FusionState.for_config(cfg), ingest(None, {}, cfg), cfg)
    assert out.cls is None and out.confidence == 0.0


def test_all_empty_log():
    out = fusion_replay([PollRecord(100 * k, {}) for k in range(30)], FusionConfig())
    assert all(o.cls is None and o.confidence == 0.0 for o in out)


def test_tie_break_prefers_drone():
    cfg = only(IR, V)
    m = ingest(None, {IR: det(IR, "Bird", 0.7, 0), V: det(V, "Drone", 0.7, 0)}, cfg)
    _, out = fusion_step(FusionState.for_config(cfg), m, cfg)
    assert out.cls is TargetClass.DRONE
    m = ingest(None, {IR: det(IR, "Airplane", 0.7, 0), V: det(V, "Helicopter", 0.7, 0)}, cfg)
    _, out = fusion_step(FusionState.for_config(cfg), m, cfg)
    assert out.cls is TargetClass.HELICOPTER


def test_unsorted_log_rejected():
    with pytest.raises(ParameterError):
        fusion_replay([PollRecord(200, {}), PollRecord(100, {})], FusionConfig())


def test_single_tick_misclassification_smoothed():
    recs = []
    for k in range(40):
        cls = "Bird" if k == 20 else "Drone"
        recs.append(PollRecord(100 * k, {V: det(V, cls, 0.8, 100 * k), IR: det(IR, "Drone", 0.7, 100 * k)}))
    recs[20] = PollRecord(2000, {V: det(V, "Bird", 0.8, 2000)})
    out = fusion_replay(recs, FusionConfig())
    assert all(o.cls is TargetClass.DRONE for o in out)


def test_false_alarm_log_gate():
    log = false_alarm_log()
    two = fusion_replay(log, FusionConfig(min_sensors=2))
    assert sum(o.cls is not None for o in two) == 0
    one = fusion_replay(log, FusionConfig(min_sensors=1))
    assert count_events(one) == 6


def test_dropout_log_system_beats_single_sensors():
    log = dropout_log()
    out = fusion_replay(log, FusionConfig())
    system = sum(o.cls is TargetClass.DRONE for o in out)
    best = max(single_sensor_ticks(log, s) for s in (IR, V, AU))
    assert system >= best
    assert system > single_sensor_ticks(log, IR)


def test_any_sensor_alone_detects():
    for s, cls in ((IR, "Drone"), (V, "Bird"), (AU, "Helicopter"), (ADSB, "Airplane")):
        out = fusion_replay([PollRecord(0, {s: det(s, cls, 0.5, 0)})], FusionConfig())
        assert out[0].cls is TargetClass(cls)


def test_replay_accepts_dicts_and_is_deterministic():
    log = dropout_log()
    dicts = [r.to_dict() for r in log]
    a = [o.to_dict() for o in fusion_replay(log, FusionConfig())]
    b = [o.to_dict() for o in fusion_replay(dicts, FusionConfig())]
    assert a == b


def test_count_events():
    from dronefuse.fusion import SystemOutput

    seq = [None, "Drone", "Drone", None, "Bird", "Drone", None, "Drone"]
    tl = [SystemOutput(i, None if c is None else TargetClass(c), 0.5, 1) for i, c in enumerate(seq)]
    assert count_events(tl) == 4
    assert count_events(tl, TargetClass.DRONE) == 3


# --- properties ----------------------------------------------------------

report = st.one_of(
    st.none(),
    st.tuples(st.sampled_from(ALL), st.floats(0.0, 1.0)),
)
poll = st.tuples(report, report, report, report)


def _records(polls):
    recs = []
    for k, p in enumerate(polls):
        reps = {}
        for s, r in zip(FUSION_SENSORS, p):
            if r is None:
                continue
            cls = r[0]
            if s is AU and cls in (TargetClass.AIRPLANE, TargetClass.BIRD):
                cls = TargetClass.DRONE
            if s is ADSB and cls is TargetClass.BIRD:
                cls = TargetClass.AIRPLANE
            reps[s] = det(s, cls, r[1], 100 * k)
        recs.append(PollRecord(100 * k, reps))
    return recs


@settings(max_examples=60, deadline=None)
@given(st.lists(poll, min_size=1, max_size=25), st.lists(st.floats(0.05, 1.0), min_size=4, max_size=4))
def test_confidence_bounds(polls, weights):
    cfg = FusionConfig(weight=dict(zip(FUSION_SENSORS, weights)))
    for o in fusion_replay(_records(polls), cfg):
        assert 0.0 <= o.confidence <= 1.0
        assert (o.cls is None) == (o.sensors_detecting < 1 or o.confidence == 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(poll, min_size=1, max_size=25), st.permutations(range(4)))
def test_permutation_invariance(polls, perm):
    # swapping which physical slot carries a report (with its weight) is a row permutation
    recs = _records(polls)
    sums_a = [np.sum([ingest(None, r.reports, FusionConfig()).values.sum(axis=0)], axis=0) for r in recs]
    cfg = FusionConfig()
    for r, s in zip(recs, sums_a):
        m = ingest(None, r.reports, cfg)
        np.testing.assert_allclose(m.values[list(perm)].sum(axis=0), s)
    out = fusion_replay(recs, cfg)
    state = FusionState.for_config(cfg)
    for r, o in zip(recs, out):
        m = ingest(None, r.reports, cfg)
        m.values = m.values[list(perm)]
        m.detecting = m.detecting[list(perm)]
        state, o2 = fusion_step(state, m, cfg, r.t)
        assert o2.cls == o.cls


def test_monotone_example():
    recs = [PollRecord(0, {IR: det(IR, "Bird", 0.6, 0), V: det(V, "Drone", 0.5, 0)})]
    base = fusion_replay(recs, FusionConfig(weight={IR: 0.5, V: 0.5}))[0]
    assert base.cls is TargetClass.BIRD
    for w in (0.6, 0.8, 1.0):
        assert fusion_replay(recs, FusionConfig(weight={IR: w, V: 0.5}))[0].cls is TargetClass.BIRD


@settings(max_examples=60, deadline=None)
@given(st.lists(poll, min_size=1, max_size=25), st.floats(0.0, 1.0))
def test_monotone_in_winning_weight(polls, bump):
    recs = _records(polls)
    base = FusionConfig(weight={s: 0.5 for s in FUSION_SENSORS})
    out = fusion_replay(recs, base)
    last = out[-1]
    if last.cls is None:
        return
    voters = [s for s, r in recs[-1].reports.items() if r is not None and r.cls == last.cls]
    if len(voters) != 1 or any(
        r.reports.get(voters[0]) is not None and r.reports[voters[0]].cls != last.cls for r in recs[-10:]
    ):
        return
    w = dict(base.weight)
    w[voters[0]] = 0.5 + 0.5 * bump
    assert fusion_replay(recs, FusionConfig(weight=w))[-1].cls == last.cls


@settings(max_examples=40, deadline=None)
@given(st.lists(poll, min_size=12, max_size=25), report)
def test_window_eviction(polls, replacement):
    recs = _records(polls)
    t = len(recs) - 1
    alt = list(polls)
    alt[t - 10] = (replacement, None, None, None)
    a = fusion_replay(recs, FusionConfig())[-1]
    b = fusion_replay(_records(alt), FusionConfig())[-1]
    assert a == b
