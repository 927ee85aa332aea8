"""Command-line entry points.

Exit codes: 0 success, 2 bad input (schema, unknown class, unreadable
file), 3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import adsb
from .audio import MfccConfig, dump_features_csv, mfcc, read_wav, slice_clips
from .core import VISION_CLASSES, ParameterError
from .evaluation import (
    BINS,
    DEFAULT_THRESHOLDS,
    evaluate_bins,
    evaluate_counts,
    map_over_classes,
    pr_curve_and_ap,
    pr_curve_svg,
    prf,
    read_ground_truth_csv,
    read_predictions,
    threshold_sweep,
)
from .fusion import FusionConfig, PollRecord, count_events, fusion_replay
from .geometry import GeoPosition, SystemPose
from .orchestrator import InvariantError, run_scenario, write_artifacts
from .sim import ScenarioError, demo_scenario_path, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
DISPLAY_RANGE_M = 30_000.0
LOG_ENV = "DRONEFUSE_LOG_LEVEL"

log = logging.getLogger("dronefuse")


class InputError(Exception):
    """User-supplied input is unusable; maps to exit code 2."""


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -----------------------------------------------------------


def run_simulate(args) -> int:
    path = args.config or demo_scenario_path()
    try:
        scenario = load_scenario(path)
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from exc
    if args.seed is not None:
        scenario.seed = args.seed
    log.info("simulating %s (%d ms, seed %d)", scenario.name, scenario.duration_ms, scenario.seed)
    result = run_scenario(scenario, realtime=args.realtime)
    paths = write_artifacts(result, _out_dir(args, "run"))
    print(f"{result.ticks} fusion ticks; artifacts in {paths['summary.json'].parent}")
    return EXIT_OK


def run_evaluate(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    iou_thr = float(cfg.get("iou", args.iou))
    thresholds = cfg.get("thresholds", DEFAULT_THRESHOLDS)
    conf_thr = float(cfg.get("confidence", args.confidence))
    gts = read_ground_truth_csv(args.gt)
    dets = read_predictions(args.pred)
    out = _out_dir(args, "eval")

    counts = evaluate_counts(dets, gts, iou_thr, conf_thr)
    per_class = {}
    curves, aps = {}, {}
    for c in VISION_CLASSES:
        n = counts.get(c)
        p, r, f1 = prf(n) if n is not None else (0.0, 0.0, 0.0)
        per_class[c.value] = {"precision": p, "recall": r, "f1": f1,
                              "tp": n.tp if n else 0, "fp": n.fp if n else 0, "fn": n.fn if n else 0}
        has_truth = any(g.cls == c for f in gts.values() for g in f.objects)
        if has_truth or any(d.cls == c for d in dets):
            curve, ap = pr_curve_and_ap(dets, gts, iou_thr, c)
            curves[c.value], aps[c.value] = curve, ap
    metrics = {
        "iou_threshold": iou_thr,
        "confidence_threshold": conf_thr,
        "per_class": per_class,
        "ap": aps,
        "map": map_over_classes(aps) if aps else 0.0,
    }
    if any(g.dri_bin is not None for f in gts.values() for g in f.objects):
        by_bin = evaluate_bins(dets, gts, iou_thr, conf_thr)
        metrics["bins"] = {
            b.value: {
                c.value: dict(zip(("precision", "recall", "f1"), prf(n)), tp=n.tp, fp=n.fp, fn=n.fn)
                for c, n in sorted(by_bin[b].items(), key=lambda kv: VISION_CLASSES.index(kv[0]))
            }
            for b in BINS
        }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    with open(out / "sweep.csv", "w", newline="") as fh:
        rows = threshold_sweep(dets, gts, thresholds, iou_thr)
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["threshold"])
        w.writeheader()
        w.writerows(rows)
    with open(out / "per_class.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "tp", "fp", "fn", "precision", "recall", "f1", "ap"])
        for name, m in per_class.items():
            w.writerow([name, m["tp"], m["fp"], m["fn"], m["precision"], m["recall"], m["f1"], aps.get(name, "")])
    with open(out / "pr_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "threshold", "recall", "precision"])
        for name, c in curves.items():
            for thr, r, p in zip(c.threshold, c.recall, c.precision):
                w.writerow([name, thr, r, p])
    (out / "pr_curves.svg").write_text(pr_curve_svg(curves))
    print(f"mAP@{iou_thr:g} = {metrics['map']:.4f} over {len(aps)} classes; results in {out}")
    return EXIT_OK


def decode_adsb_lines(lines: Sequence[str], system: SystemPose) -> tuple[adsb.AdsbQueues, int, int]:
    """Fold "t_us,hex" (or bare hex) lines into queues; returns (queues, ok, bad)."""
    queues = adsb.AdsbQueues()
    ok = bad = 0
    for i, line in enumerate(lines):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        t_ms = i * 1000
        hexpart = line
        if "," in line:
            ts, hexpart = line.split(",", 1)
            try:
                t_ms = int(ts) // 1000
            except ValueError:
                bad += 1
                continue
        try:
            if not adsb.crc_ok(hexpart):
                bad += 1
                continue
            msg = adsb.decode_frame(hexpart)
        except adsb.AdsbError:
            bad += 1
            continue
        ok += 1
        if msg is not None:
            adsb.update_queues(queues, msg, system, t_ms)
    return queues, ok, bad


def run_decode_adsb(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    lat = cfg.get("lat", args.lat)
    lon = cfg.get("lon", args.lon)
    if lat is None or lon is None:
        raise InputError("system position needed: --lat/--lon or a config with lat/lon")
    system = SystemPose(GeoPosition(float(lat), float(lon), float(cfg.get("alt", args.alt))))
    try:
        lines = Path(args.frames).read_text().splitlines()
    except OSError as exc:
        raise InputError(str(exc)) from exc
    queues, ok, bad = decode_adsb_lines(lines, system)
    if ok == 0 and bad > 0:
        log.error("no decodable frames (%d rejected)", bad)
        return EXIT_INPUT
    out_lines = []
    for e in queues.snapshot():
        d = e.to_dict()
        d["displayable"] = e.horizontal_distance is not None and e.horizontal_distance <= DISPLAY_RANGE_M
        out_lines.append(json.dumps(d, sort_keys=True))
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("%d frames decoded, %d skipped", ok, bad)
    return EXIT_OK


def run_mfcc_dump(args) -> int:
    try:
        samples, rate = read_wav(args.wav)
    except (OSError, EOFError) as exc:
        raise InputError(f"cannot read {args.wav}: {exc}") from exc
    cfg = MfccConfig.for_rate(rate)
    buffers = slice_clips(samples, rate)
    feats = [mfcc(b, cfg) for b in buffers]
    out = args.out or "mfcc.csv"
    dump_features_csv(out, feats)
    print(f"{len(feats)} buffers x {feats[0].shape[0] if feats else 0} frames -> {out}")
    return EXIT_OK


def _read_poll_records(path) -> list[PollRecord]:
    recs = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            d = json.loads(line)
            kind = d.get("type", "poll")
            if kind != "poll":
                continue
            try:
                recs.append(PollRecord.from_dict(d))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{n}: bad poll record ({exc})") from exc
    return recs


def run_fuse_replay(args) -> int:
    cfg_d = _load_json(args.config) if args.config else {}
    if args.min_sensors is not None:
        cfg_d["min_sensors"] = args.min_sensors
    cfg = FusionConfig.from_dict(cfg_d)
    try:
        records = _read_poll_records(args.log)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    outputs = fusion_replay(records, cfg)
    text = "".join(json.dumps(o.to_dict(), sort_keys=True) + "\n" for o in outputs)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"{len(outputs)} ticks, {count_events(outputs)} system events", file=sys.stderr)
    return EXIT_OK


def run_report(args) -> int:
    run_dir = Path(args.run_dir)
    summary = _load_json(run_dir / "summary.json")
    sysd = summary["system"]
    print(f"scenario {summary['scenario']} seed {summary['seed']}: {summary['fusion_ticks']} ticks")
    print("system ticks by class: " + ", ".join(f"{k} {v}" for k, v in sysd["ticks_by_class"].items()))
    print(f"system events {sysd['events']} (drone {sysd['drone_events']}), "
          f"false detection events {sysd['false_detection_events']}")
    opp = summary["opportunities"]
    print(f"detection opportunities: {opp['count']}")
    for src, frac in opp["fractions"].items():
        print(f"  {src:8s} {frac:.2f}")
    metrics = run_dir / "metrics.csv"
    if metrics.exists():
        print(metrics.read_text().rstrip())
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def common_flags(defaults: bool) -> argparse.ArgumentParser:
        # the per-command copy suppresses defaults so it cannot clobber flags given before the command
        extra = {} if defaults else {"default": argparse.SUPPRESS}
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--config", help="scenario or command config (JSON)", **extra)
        c.add_argument("--seed", type=int, help="override the scenario seed", **extra)
        c.add_argument("--out", help="output directory or file", **extra)
        c.add_argument("--realtime", action="store_true", help="pace the run by the wall clock", **extra)
        return c

    common = common_flags(False)
    p = argparse.ArgumentParser(prog="dronefuse", description=__doc__.splitlines()[0],
                                parents=[common_flags(True)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario through the full pipeline")
    s.set_defaults(func=run_simulate)

    e = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--confidence", type=float, default=0.5)
    e.set_defaults(func=run_evaluate)

    a = sub.add_parser("decode-adsb", parents=[common], help="decode a file of DF17 frames")
    a.add_argument("frames")
    a.add_argument("--lat", type=float)
    a.add_argument("--lon", type=float)
    a.add_argument("--alt", type=float, default=0.0)
    a.set_defaults(func=run_decode_adsb)

    m = sub.add_parser("mfcc-dump", parents=[common], help="MFCC features of a WAV file as CSV")
    m.add_argument("wav")
    m.set_defaults(func=run_mfcc_dump)

    f = sub.add_parser("fuse-replay", parents=[common], help="re-run fusion over logged polls")
    f.add_argument("log")
    f.add_argument("--min-sensors", type=int)
    f.set_defaults(func=run_fuse_replay)

    r = sub.add_parser("report", parents=[common], help="print a finished run's summary")
    r.add_argument("run_dir")
    r.set_defaults(func=run_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ScenarioError, ParameterError, adsb.AdsbError, KeyError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
