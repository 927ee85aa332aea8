"""Main loop and sensor workers on a virtual clock.

Each worker owns its sensor state and talks to the main loop only through a
bounded single-producer/single-consumer queue; the main loop sends run/idle
commands back on a separate queue. The scheduler interleaves workers and
main-loop polls in a fixed order on integer milliseconds, so a run is a pure
function of the scenario and seed. Real-time mode only adds wall-clock pacing.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import adsb
from .core import Detection, SensorId, TargetClass
from .evaluation import Opportunity, opportunity_analysis
from .fusion import FUSION_SENSORS, FusionConfig, FusionState, PollRecord, count_events, fusion_step, ingest
from .geometry import SystemPose, fov_contains
from .platform import (
    AbsoluteAim,
    ControlSource,
    PlatformState,
    RelativeAim,
    SearchAim,
    SearchPattern,
    SearchVariant,
    bbox_to_offset,
    select_source,
    servo_tick,
)
from .sim import (
    Scenario,
    audio_report,
    emit_adsb,
    fisheye_angles,
    fisheye_background,
    render_fisheye_frame,
    rng_stream,
    sensor_report,
    sightings,
)
from .tracking import KalmanConfig, MultiObjectTracker, TrackerConfig
from .vision import FisheyePipeline, GmmConfig

log = logging.getLogger("dronefuse")

POLL_HZ = 10.0
SERVO_HZ = 5.0
ADSB_DISPLAY_HZ = 0.5
WORKER_ORDER = (SensorId.IRCAM, SensorId.VCAM, SensorId.FCAM, SensorId.AUDIO, SensorId.ADSB)


class InvariantError(RuntimeError):
    """Internal consistency check failed during a run."""


@dataclass(frozen=True)
class RateTable:
    queue_poll: float = POLL_HZ
    servo_command: float = SERVO_HZ
    adsb_display: float = ADSB_DISPLAY_HZ

    def __post_init__(self):
        if min(self.queue_poll, self.servo_command, self.adsb_display) <= 0:
            raise ValueError("all rates must be positive")


def tick_times(rate_hz: float, duration_ms: int) -> list[int]:
    """Integer-ms times k*1000/rate for every k with time < duration."""
    n = math.ceil(duration_ms * rate_hz / 1000.0 - 1e-9)
    return [int(math.floor(k * 1000.0 / rate_hz + 1e-9)) for k in range(n)]


class BoundedQueue:
    """Single-producer/single-consumer queue; a full queue drops its oldest item."""

    def __init__(self, maxsize: int = 16):
        self._q: deque = deque(maxlen=maxsize)
        self.dropped = 0

    def put(self, item) -> None:
        if len(self._q) == self._q.maxlen:
            self.dropped += 1
        self._q.append(item)

    def drain(self) -> list:
        out = list(self._q)
        self._q.clear()
        return out

    def __len__(self) -> int:
        return len(self._q)


class WorkerCommand(str, enum.Enum):
    RUN = "run"
    IDLE = "idle"


@dataclass(frozen=True)
class WorkerMessage:
    sensor: SensorId
    t: int
    payload: Any


@dataclass(frozen=True)
class FcamReport:
    azimuth_offset: float
    elevation: float
    track: dict


class World:
    """Physical ground truth the sensors look at: targets plus the platform pose."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.pose = scenario.system

    def point(self, pan: float, tilt: float) -> None:
        self.pose = replace(self.pose, pan=pan, tilt=tilt)


class Worker:
    def __init__(self, sensor: SensorId, scenario: Scenario, queue_size: int = 16):
        self.sensor = sensor
        self.model = scenario.sensors[sensor]
        self.out = BoundedQueue(queue_size)
        self.commands = BoundedQueue(queue_size)
        self.running = self.model.enabled
        self.rng = rng_stream(scenario.seed, sensor.value)

    def run(self, t: int, world: World, events: list) -> None:
        for cmd in self.commands.drain():
            self.running = cmd is WorkerCommand.RUN
        if not self.running:
            return
        stall = self.model.stall_after_ms
        if stall is not None and t >= stall:
            return
        self.out.put(WorkerMessage(self.sensor, t, self.observe(t, world, events)))

    def observe(self, t: int, world: World, events: list):
        raise NotImplementedError


class CameraWorker(Worker):
    def observe(self, t, world, events):
        det = sensor_report(world.scenario, self.sensor, world.pose, t, self.rng)
        if det is not None:
            events.append({"type": "detection", **det.to_dict()})
        return det


class AudioWorker(Worker):
    def observe(self, t, world, events):
        det = audio_report(world.scenario, t, self.rng)
        if det is not None:
            events.append({"type": "detection", **det.to_dict()})
        return det


class FisheyeWorker(Worker):
    def __init__(self, sensor, scenario, queue_size=16, gmm: GmmConfig = GmmConfig(),
                 kalman: KalmanConfig = KalmanConfig(), tracker: TrackerConfig = TrackerConfig()):
        super().__init__(sensor, scenario, queue_size)
        self.pipeline = FisheyePipeline(gmm)
        self.tracker = MultiObjectTracker(kalman, tracker)
        self.background = fisheye_background(scenario)
        self.frames = 0

    def observe(self, t, world, events):
        frame = render_fisheye_frame(world.scenario, t, self.background)
        blobs = self.pipeline.process(frame)
        best = self.tracker.step(blobs, t)
        self.frames += 1
        if best is None:
            return None
        x, y = best.position
        # the tracker works in the cropped upper half, which shares the frame's top rows
        az, el = fisheye_angles(world.scenario.fisheye.camera, x, y)
        snap = best.snapshot()
        events.append({"type": "track", "t": t, **snap})
        return FcamReport(az, el, snap)


class AdsbWorker(Worker):
    def __init__(self, sensor, scenario, queue_size=16):
        super().__init__(sensor, scenario, queue_size)
        self.queues = adsb.AdsbQueues()
        self.last_t = -1
        self.frames = 0
        self.crc_failures = 0

    def observe(self, t, world, events):
        scn = world.scenario
        first = self.last_t // 1000 + 1
        for sec in range(first, t // 1000 + 1):
            at = sec * 1000
            for tg in scn.targets:
                for hexframe in emit_adsb(scn, tg, at):
                    self.frames += 1
                    if not adsb.crc_ok(hexframe):
                        self.crc_failures += 1
                        continue
                    msg = adsb.decode_frame(hexframe)
                    if msg is None:
                        continue
                    adsb.update_queues(self.queues, msg, scn.system, at)
                    events.append({"type": "adsb", "t": at, **self.queues.current[msg.icao].to_dict()})
        self.last_t = t
        self.queues.expire(t)
        return self.queues.snapshot()


def make_workers(scenario: Scenario) -> dict[SensorId, Worker]:
    return {
        SensorId.IRCAM: CameraWorker(SensorId.IRCAM, scenario),
        SensorId.VCAM: CameraWorker(SensorId.VCAM, scenario),
        SensorId.FCAM: FisheyeWorker(SensorId.FCAM, scenario),
        SensorId.AUDIO: AudioWorker(SensorId.AUDIO, scenario),
        SensorId.ADSB: AdsbWorker(SensorId.ADSB, scenario),
    }


# --- main loop -------------------------------------------------------------


def _enabled_sources(platform_cfg: dict) -> tuple[ControlSource, ...]:
    names = platform_cfg.get("sources", [s.value for s in ControlSource if s is not ControlSource.IDLE])
    return tuple(ControlSource(n) for n in names)


@dataclass
class RunResult:
    events: list[dict]
    summary: dict
    metrics: list[dict]
    ticks: int


class MainLoop:
    """Sole owner of fusion and platform state."""

    def __init__(self, scenario: Scenario, workers: dict[SensorId, Worker], world: World,
                 stale_ms: int = 1000, rates: RateTable = RateTable()):
        self.scn = scenario
        self.workers = workers
        self.world = world
        self.stale_ms = stale_ms
        self.rates = rates
        pc = scenario.platform
        self.platform = PlatformState(
            pan=float(pc.get("pan", 0.0)),
            tilt=float(pc.get("tilt", 10.0)),
            pan_limits=tuple(pc.get("pan_limits", (-45.0, 45.0))),
            tilt_limits=tuple(pc.get("tilt_limits", (0.0, 45.0))),
            command_period_ms=int(round(1000.0 / rates.servo_command)),
            max_slew=float(pc.get("max_slew", 90.0)),
        )
        self.search = SearchPattern(
            SearchVariant(pc.get("search", "A")), sweep_rate=float(pc.get("sweep_rate", 15.0))
        )
        self.sources = _enabled_sources(pc)
        self.fusion_cfg = FusionConfig.from_dict(scenario.fusion)
        self.fusion = FusionState.for_config(self.fusion_cfg)
        self.pending_changes = list(scenario.fusion_changes)
        self.latest: dict[SensorId, WorkerMessage] = {}
        self.matrix = None
        self.world.point(self.platform.pan, self.platform.tilt)
        self.display_period = int(round(1000.0 / rates.adsb_display))
        self.outputs = []
        self.truth_ticks: list[dict] = []
        self.false_ticks = 0
        self.commands = 0
        for s, w in workers.items():
            w.commands.put(WorkerCommand.RUN if scenario.sensors[s].enabled else WorkerCommand.IDLE)

    def _current(self, sensor: SensorId, t: int):
        msg = self.latest.get(sensor)
        if msg is None or t - msg.t > self.stale_ms:
            return None
        return msg.payload

    def _adsb_report(self, t: int, pose: SystemPose) -> Optional[Detection]:
        entries = self._current(SensorId.ADSB, t)
        if not entries:
            return None
        cam = self.scn.cameras[SensorId.IRCAM]
        seen = [
            e for e in entries
            if e.azimuth is not None and fov_contains(pose, cam, e.azimuth, e.elevation)[0]
        ]
        if not seen:
            return Detection(SensorId.ADSB, TargetClass.NODATA, 0.0, t)
        e = min(seen, key=lambda e: (e.distance, e.icao))
        return Detection(SensorId.ADSB, e.cls, e.confidence, t)

    def _truth(self, t: int, pose: SystemPose) -> tuple[set, bool]:
        scn = self.scn
        seen: set = set()
        drone_in_fov = False
        for s in sightings(scn, t):
            g = s.geometry
            in_ir = fov_contains(pose, scn.cameras[SensorId.IRCAM], g.azimuth, g.elevation)[0]
            in_v = fov_contains(pose, scn.cameras[SensorId.VCAM], g.azimuth, g.elevation)[0]
            if in_ir or in_v:
                seen.add(s.target.cls)
            if in_ir and in_v and s.target.cls is TargetClass.DRONE:
                drone_in_fov = True
            if s.target.sound_class is not None and g.sloping_distance <= scn.audio_radius_m:
                seen.add(s.target.sound_class)
        return seen, drone_in_fov

    def poll(self, t: int, events: list) -> None:
        while self.pending_changes and self.pending_changes[0]["t_s"] * 1000 <= t:
            change = self.pending_changes.pop(0)
            merged = {**self.scn.fusion, **{k: v for k, v in change.items() if k != "t_s"}}
            self.fusion_cfg = FusionConfig.from_dict(merged)
            events.append({"type": "config", "t": t, "fusion": merged})

        for s in WORKER_ORDER:
            for msg in self.workers[s].out.drain():
                if msg.t > t:
                    raise InvariantError(f"{s.value} message from the future ({msg.t} > {t})")
                self.latest[s] = msg

        pose = self.world.pose
        reports = {
            SensorId.IRCAM: self._current(SensorId.IRCAM, t),
            SensorId.VCAM: self._current(SensorId.VCAM, t),
            SensorId.AUDIO: self._current(SensorId.AUDIO, t),
            SensorId.ADSB: self._adsb_report(t, pose),
        }
        record = PollRecord(t, reports)
        events.append({"type": "poll", **record.to_dict()})
        self.matrix = ingest(self.matrix, reports, self.fusion_cfg)
        self.fusion, out = fusion_step(self.fusion, self.matrix, self.fusion_cfg, t)
        if not 0.0 <= out.confidence <= 1.0:
            raise InvariantError("fusion confidence outside [0, 1]")
        self.outputs.append(out)
        events.append({"type": "fusion", **out.to_dict()})

        seen, drone_in_fov = self._truth(t, pose)
        if out.cls is not None and out.cls not in seen:
            self.false_ticks += 1
        tick = {s.value: (None if d is None else d.cls.value) for s, d in reports.items()}
        tick["System"] = None if out.cls is None else out.cls.value
        self.truth_ticks.append({"t": t, "drone_in_fov": drone_in_fov, "outputs": tick,
                                 "false": out.cls is not None and out.cls not in seen})

        fc = self._current(SensorId.FCAM, t)
        live = {
            ControlSource.IRCAM: reports[SensorId.IRCAM] is not None,
            ControlSource.VCAM: reports[SensorId.VCAM] is not None,
            ControlSource.FCAM: fc is not None,
        }
        src = select_source(live, self.sources)
        request = None
        if src in (ControlSource.IR_AND_V, ControlSource.IRCAM):
            request = RelativeAim(bbox_to_offset(reports[SensorId.IRCAM].bbox, self.scn.cameras[SensorId.IRCAM]))
        elif src is ControlSource.VCAM:
            request = RelativeAim(bbox_to_offset(reports[SensorId.VCAM].bbox, self.scn.cameras[SensorId.VCAM]))
        elif src is ControlSource.FCAM:
            request = AbsoluteAim(fc.azimuth_offset, fc.elevation)
        elif src is ControlSource.SEARCH:
            request = SearchAim(self.search)
        dt = int(round(1000.0 / self.rates.queue_poll))
        self.platform, cmd = servo_tick(self.platform, request, dt, t, src)
        if cmd is not None:
            self.commands += 1
            self.world.point(cmd.pan, cmd.tilt)
            events.append({"type": "command", **cmd.to_dict()})

        if t % self.display_period == 0:
            entries = self._current(SensorId.ADSB, t) or []
            events.append({"type": "adsb_display", "t": t, "aircraft": [e.to_dict() for e in entries]})

    def opportunities(self) -> list[Opportunity]:
        out, run = [], []
        for tick in self.truth_ticks + [{"drone_in_fov": False}]:
            if tick["drone_in_fov"]:
                run.append(tick)
            elif run:
                out.append(Opportunity(run[0]["t"], run[-1]["t"] + 1, [r["outputs"] for r in run]))
                run = []
        return out


def _schedule(scenario: Scenario, rates: RateTable) -> list[tuple[int, int, str]]:
    """Heap of (t, order, name); workers run before the poll that shares their ms."""
    heap = []
    for order, s in enumerate(WORKER_ORDER):
        for t in tick_times(scenario.sensors[s].rate_hz, scenario.duration_ms):
            heap.append((t, order, s.value))
    for t in tick_times(rates.queue_poll, scenario.duration_ms):
        heap.append((t, len(WORKER_ORDER), "poll"))
    heapq.heapify(heap)
    return heap


def run_scenario(scenario: Scenario, realtime: bool = False, rates: RateTable = RateTable(),
                 stale_ms: int = 1000) -> RunResult:
    world = World(scenario)
    workers = make_workers(scenario)
    main = MainLoop(scenario, workers, world, stale_ms, rates)
    events: list[dict] = []
    heap = _schedule(scenario, rates)
    start = time.monotonic()
    ticks = 0
    while heap:
        t, _, name = heapq.heappop(heap)
        if realtime:
            delay = start + t / 1000.0 - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        if name == "poll":
            main.poll(t, events)
            ticks += 1
        else:
            workers[SensorId(name)].run(t, world, events)
    summary, metrics = _summarize(scenario, main, workers, ticks)
    return RunResult(events, summary, metrics, ticks)


def _summarize(scn: Scenario, main: MainLoop, workers, ticks: int) -> tuple[dict, list[dict]]:
    outs = main.outputs
    by_class = {c.value: sum(o.cls is c for o in outs) for c in (TargetClass.AIRPLANE, TargetClass.BIRD,
                                                               TargetClass.DRONE, TargetClass.HELICOPTER)}
    false_events, prev = 0, False
    for tick in main.truth_ticks:
        if tick["false"] and not prev:
            false_events += 1
        prev = tick["false"]
    opps = main.opportunities()
    fractions = opportunity_analysis(opps, TargetClass.DRONE) if opps else {}
    aw: AdsbWorker = workers[SensorId.ADSB]
    fw: FisheyeWorker = workers[SensorId.FCAM]
    summary = {
        "scenario": scn.name,
        "seed": scn.seed,
        "duration_ms": scn.duration_ms,
        "fusion_ticks": ticks,
        "system": {
            "ticks_by_class": by_class,
            "events": count_events(outs),
            "drone_events": count_events(outs, TargetClass.DRONE),
            "false_detection_ticks": main.false_ticks,
            "false_detection_events": false_events,
        },
        "opportunities": {
            "count": len(opps),
            "fractions": {k: round(v, 6) for k, v in sorted(fractions.items())},
        },
        "adsb": {
            "frames": aw.frames,
            "crc_failures": aw.crc_failures,
            "aircraft": sorted(aw.queues.current),
        },
        "fcam": {"frames": fw.frames, "tracks_created": fw.tracker.state.next_id - 1},
        "servo_commands": main.commands,
        "queue_drops": {s.value: workers[s].out.dropped for s in WORKER_ORDER},
    }
    metrics = []
    for src in [s.value for s in FUSION_SENSORS] + ["System"]:
        det_ticks = sum(t["outputs"].get(src) not in (None, "Background", "NoData") for t in main.truth_ticks)
        drone_ticks = sum(t["outputs"].get(src) == "Drone" for t in main.truth_ticks)
        metrics.append({
            "source": src,
            "detection_ticks": det_ticks,
            "drone_ticks": drone_ticks,
            "opportunity_fraction": round(fractions.get(src, 0.0), 6),
        })
    return summary, metrics


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_artifacts(result: RunResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / k for k in ("events.jsonl", "metrics.csv", "summary.json")}
    with open(paths["events.jsonl"], "w") as fh:
        for ev in result.events:
            fh.write(_dumps(ev) + "\n")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["source", "detection_ticks", "drone_ticks", "opportunity_fraction"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(result.metrics)
    paths["metrics.csv"].write_text(buf.getvalue())
    paths["summary.json"].write_text(json.dumps(result.summary, sort_keys=True, indent=2) + "\n")
    return paths


def events_of_type(path, kind: str) -> list[dict]:
    with open(path) as fh:
        return [ev for ev in map(json.loads, fh) if ev.get("type") == kind]
