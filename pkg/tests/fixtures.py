"""Scripted poll logs shared by the fusion and acceptance tests."""

from dronefuse.core import BBox, Detection, SensorId, TargetClass
from dronefuse.fusion import PollRecord

BOX = BBox(300, 200, 20, 14)


def det(sensor, cls, conf, t):
    sensor = SensorId(sensor)
    bbox = BOX if sensor in (SensorId.IRCAM, SensorId.VCAM) else None
    return Detection(sensor, TargetClass(cls), conf, t, bbox)


def false_alarm_log():
    """Six short single-sensor false events separated by quiet gaps.

    Insects in the IR image, a cloud edge in the video image and wind noise
    in the microphone each trigger one sensor at a time.
    """
    events = [
        (SensorId.IRCAM, TargetClass.DRONE, 0.62, 3),
        (SensorId.VCAM, TargetClass.BIRD, 0.55, 2),
        (SensorId.AUDIO, TargetClass.DRONE, 0.71, 4),
        (SensorId.IRCAM, TargetClass.BIRD, 0.80, 1),
        (SensorId.VCAM, TargetClass.DRONE, 0.66, 5),
        (SensorId.IRCAM, TargetClass.DRONE, 0.58, 2),
    ]
    records = []
    t = 0
    for sensor, cls, conf, length in events:
        for _ in range(20):
            records.append(PollRecord(t, {}))
            t += 100
        for _ in range(length):
            records.append(PollRecord(t, {sensor: det(sensor, cls, conf, t)}))
            t += 100
    for _ in range(20):
        records.append(PollRecord(t, {}))
        t += 100
    return records


# per-tick presence pattern for a drone crossing the field of view
_IR = "111101101110111011011101111011101110"
_V = "011011110111010111101101011101111011"
_AU = "111111111111111111111111111111111111"


def dropout_log():
    """A drone in view for 36 ticks with IR and video intermittently missing."""
    records = []
    for k in range(len(_IR)):
        t = 100 * k
        reps = {}
        if _IR[k] == "1":
            reps[SensorId.IRCAM] = det(SensorId.IRCAM, TargetClass.DRONE, 0.85, t)
        if _V[k] == "1":
            reps[SensorId.VCAM] = det(SensorId.VCAM, TargetClass.DRONE, 0.75, t)
        if k % 4 != 3:
            reps[SensorId.AUDIO] = det(SensorId.AUDIO, TargetClass.DRONE, 0.6, t)
        else:
            reps[SensorId.AUDIO] = det(SensorId.AUDIO, TargetClass.BACKGROUND, 0.7, t)
        records.append(PollRecord(t, reps))
    return records


def single_sensor_ticks(records, sensor, cls=TargetClass.DRONE):
    return sum(1 for r in records if r.reports.get(sensor) is not None and r.reports[sensor].cls == cls)


def opportunity_fixture():
    """73 drone passes; the fused output catches 57 and the video camera 49."""
    from dronefuse.evaluation import Opportunity

    log = []
    for i in range(73):
        sys_hit = i < 57
        v_hit = i % 73 < 49 if i < 57 else False
        ticks = []
        for k in range(5):
            ticks.append({
                "System": "Drone" if sys_hit and k >= 2 else None,
                "Vcam": "Drone" if v_hit and k == 3 else ("Bird" if k == 1 else None),
                "IRcam": "Drone" if (i % 3 == 0 and sys_hit and k == 2) else None,
            })
        log.append(Opportunity(1000 * i, 1000 * i + 500, ticks))
    return log


def scenario_dict(targets=(), duration_s=10.0, seed=7, sensors=None, **extra):
    """Minimal valid scenario document; perfect sensors unless overridden."""
    d = {
        "schema_version": 1,
        "name": "fixture",
        "seed": seed,
        "duration_s": duration_s,
        "system": {"lat": 56.0, "lon": 13.0, "alt": 0.0, "orientation_deg": 0.0},
        "targets": list(targets),
        "sensors": sensors if sensors is not None else {
            "IRcam": {"detect_prob": {"default": 1.0}, "confidence": {"default": [0.9, 0.0]}},
            "Vcam": {"detect_prob": {"default": 1.0}, "confidence": {"default": [0.8, 0.0]}},
            "Audio": {"detect_prob": {"default": 1.0}, "confidence": {"default": [0.7, 0.0]}},
            "Fcam": {"enabled": False},
        },
    }
    d.update(extra)
    return d


def drone(waypoints, name="drone", size_m=0.4, sound=True):
    t = {"name": name, "class": "Drone", "size_m": size_m,
         "waypoints": [{"t_s": t, "enu": list(e)} for t, e in waypoints]}
    if sound:
        t["sound_class"] = "Drone"
    return t
