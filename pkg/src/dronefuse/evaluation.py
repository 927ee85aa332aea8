"""Detection evaluation: IoU matching, P/R/F1, PR curves, AP/mAP, sweeps,
anchor-box clustering and detection-opportunity statistics."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import VISION_CLASSES, BBox, ParameterError, TargetClass, iou
from .geometry import DriBin

BINS = (DriBin.CLOSE, DriBin.MEDIUM, DriBin.DISTANT)


@dataclass(frozen=True)
class ScoredBox:
    """A detector output tied to an evaluation frame."""

    frame: str
    cls: TargetClass
    bbox: BBox
    confidence: float


@dataclass(frozen=True)
class GroundTruthObject:
    cls: TargetClass
    bbox: BBox
    dri_bin: Optional[DriBin] = None


@dataclass
class GroundTruthFrame:
    frame: str
    objects: list[GroundTruthObject] = field(default_factory=list)


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.tp, self.fp, self.fn)


@dataclass(frozen=True)
class MatchOutcome:
    det: ScoredBox
    tp: bool
    gt_index: Optional[int]


def _det_order(d: ScoredBox):
    return (-d.confidence, d.cls.value, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h)


def match_frame(
    dets: Sequence[ScoredBox], gt: GroundTruthFrame, iou_thr: float = 0.5
) -> list[MatchOutcome]:
    """Greedy matching, strongest detection first.

    Each detection claims the unmatched same-class truth it overlaps most
    (IoU >= ``iou_thr``). A truth is therefore credited to the strongest
    detection that reaches it; weaker duplicates become false positives.
    """
    taken = [False] * len(gt.objects)
    out = []
    for d in sorted(dets, key=_det_order):
        best, best_iou = None, iou_thr
        for j, g in enumerate(gt.objects):
            if taken[j] or g.cls != d.cls:
                continue
            v = iou(d.bbox, g.bbox)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
        out.append(MatchOutcome(d, best is not None, best))
    return out


def match_detections(
    dets: Sequence[ScoredBox],
    gt: GroundTruthFrame,
    iou_thr: float = 0.5,
    conf_thr: float = 0.0,
) -> dict[TargetClass, Counts]:
    """Per-class (TP, FP, FN) for one frame."""
    if not (0 <= iou_thr <= 1 and 0 <= conf_thr <= 1):
        raise ParameterError("thresholds must lie in [0, 1]")
    kept = [d for d in dets if d.confidence >= conf_thr]
    outcomes = match_frame(kept, gt, iou_thr)
    counts: dict[TargetClass, Counts] = defaultdict(Counts)
    matched = set()
    for o in outcomes:
        if o.tp:
            counts[o.det.cls].tp += 1
            matched.add(o.gt_index)
        else:
            counts[o.det.cls].fp += 1
    for j, g in enumerate(gt.objects):
        if j not in matched:
            counts[g.cls].fn += 1
    return dict(counts)


def prf(counts) -> tuple[float, float, float]:
    """Precision, recall and F1; an empty denominator gives 0."""
    tp, fp, fn = counts.as_tuple() if isinstance(counts, Counts) else counts
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _by_frame(dets: Iterable[ScoredBox]) -> dict[str, list[ScoredBox]]:
    out: dict[str, list[ScoredBox]] = defaultdict(list)
    for d in dets:
        out[d.frame].append(d)
    return out


def _gt_index(gts) -> dict[str, GroundTruthFrame]:
    if isinstance(gts, Mapping):
        return dict(gts)
    return {g.frame: g for g in gts}


def evaluate_counts(
    dets: Sequence[ScoredBox], gts, iou_thr: float = 0.5, conf_thr: float = 0.0
) -> dict[TargetClass, Counts]:
    gmap = _gt_index(gts)
    dmap = _by_frame(dets)
    total: dict[TargetClass, Counts] = defaultdict(Counts)
    for frame in sorted(set(gmap) | set(dmap)):
        gt = gmap.get(frame, GroundTruthFrame(frame))
        for c, n in match_detections(dmap.get(frame, []), gt, iou_thr, conf_thr).items():
            total[c] = total[c] + n
    return dict(total)


def evaluate_bins(
    dets: Sequence[ScoredBox], gts, iou_thr: float = 0.5, conf_thr: float = 0.0
) -> dict[DriBin, dict[TargetClass, Counts]]:
    """Per-bin, per-class counts using each truth's annotated distance bin.

    A true positive or a miss belongs to its truth's bin. A false positive
    goes to the bin of the truth it overlaps most; with no overlap, to the
    frame's bin when all its truths share one, otherwise it is not binned.
    """
    gmap = _gt_index(gts)
    dmap = _by_frame(dets)
    out = {b: defaultdict(Counts) for b in BINS}
    for frame in sorted(set(gmap) | set(dmap)):
        gt = gmap.get(frame, GroundTruthFrame(frame))
        kept = [d for d in dmap.get(frame, []) if d.confidence >= conf_thr]
        outcomes = match_frame(kept, gt, iou_thr)
        matched = {o.gt_index for o in outcomes if o.tp}
        frame_bins = {g.dri_bin for g in gt.objects}
        for o in outcomes:
            if o.tp:
                b = gt.objects[o.gt_index].dri_bin
                if b is not None:
                    out[b][o.det.cls].tp += 1
                continue
            overlaps = [(iou(o.det.bbox, g.bbox), g.dri_bin) for g in gt.objects]
            overlaps = [ov for ov in overlaps if ov[0] > 0 and ov[1] is not None]
            if overlaps:
                b = max(overlaps, key=lambda ov: ov[0])[1]
            elif len(frame_bins) == 1 and None not in frame_bins:
                b = next(iter(frame_bins))
            else:
                continue
            out[b][o.det.cls].fp += 1
        for j, g in enumerate(gt.objects):
            if j not in matched and g.dri_bin is not None:
                out[g.dri_bin][g.cls].fn += 1
    return {b: dict(v) for b, v in out.items()}


@dataclass
class PrCurve:
    recall: list[float] = field(default_factory=list)
    precision: list[float] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)


def pr_curve_and_ap(
    dets: Sequence[ScoredBox],
    gts,
    iou_thr: float = 0.5,
    cls: Optional[TargetClass] = None,
) -> tuple[PrCurve, float]:
    """Precision/recall over descending confidence and the area under it.

    AP is the running sum of precision times each recall increment, with
    precision read at the detection that produced the increment.
    """
    gmap = _gt_index(gts)
    if cls is not None:
        dets = [d for d in dets if d.cls == cls]
        gmap = {
            k: GroundTruthFrame(k, [g for g in v.objects if g.cls == cls]) for k, v in gmap.items()
        }
    n_gt = sum(len(g.objects) for g in gmap.values())

    flags: dict[int, bool] = {}
    for frame, fdets in _by_frame(dets).items():
        gt = gmap.get(frame, GroundTruthFrame(frame))
        for o in match_frame(fdets, gt, iou_thr):
            flags[id(o.det)] = o.tp

    ordered = sorted(dets, key=lambda d: (_det_order(d), d.frame))
    curve = PrCurve()
    tp = fp = 0
    ap = 0.0
    prev_r = 0.0
    for d in ordered:
        if flags[id(d)]:
            tp += 1
        else:
            fp += 1
        p = tp / (tp + fp)
        r = tp / n_gt if n_gt else 0.0
        ap += p * (r - prev_r)
        prev_r = r
        curve.recall.append(r)
        curve.precision.append(p)
        curve.threshold.append(d.confidence)
    return curve, ap


def map_over_classes(aps) -> float:
    vals = list(aps.values()) if isinstance(aps, Mapping) else list(aps)
    if not vals:
        raise ParameterError("mAP needs at least one class")
    return float(sum(vals) / len(vals))


DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 11))


def threshold_sweep(
    dets: Sequence[ScoredBox],
    gts,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    iou_thr: float = 0.5,
) -> list[dict]:
    """Pooled P/R/F1 at each confidence threshold."""
    rows = []
    for thr in thresholds:
        total = Counts()
        for c in evaluate_counts(dets, gts, iou_thr, thr).values():
            total = total + c
        p, r, f1 = prf(total)
        rows.append({"threshold": thr, "tp": total.tp, "fp": total.fp, "fn": total.fn,
                     "precision": p, "recall": r, "f1": f1})
    return rows


# --- anchor boxes ----------------------------------------------------------


def wh_iou(boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of corner-aligned (w, h) boxes against anchors, shape (N, K)."""
    inter = np.minimum(boxes[:, None, 0], anchors[None, :, 0]) * np.minimum(
        boxes[:, None, 1], anchors[None, :, 1]
    )
    area_b = boxes[:, 0] * boxes[:, 1]
    area_a = anchors[:, 0] * anchors[:, 1]
    return inter / (area_b[:, None] + area_a[None, :] - inter)


def _mean_best_iou(boxes, anchors) -> float:
    return float(wh_iou(boxes, anchors).max(axis=1).mean())


def _lloyd(boxes, anchors, max_iter=300):
    for _ in range(max_iter):
        assign = wh_iou(boxes, anchors).argmax(axis=1)
        new = anchors.copy()
        for j in range(len(anchors)):
            members = boxes[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if np.allclose(new, anchors, rtol=0, atol=1e-12):
            break
        anchors = new
    return anchors


def _farthest_point_seed(boxes, k, rng, start=None):
    chosen = [] if start is None else [a for a in start]
    if not chosen:
        chosen.append(boxes[rng.integers(len(boxes))])
    while len(chosen) < k:
        d = 1.0 - wh_iou(boxes, np.array(chosen)).max(axis=1)
        chosen.append(boxes[int(np.argmax(d))])
    return np.array(chosen, dtype=float)


def anchor_kmeans(boxes, k: int, restarts: int = 10, seed: int = 0):
    """Cluster (w, h) boxes with distance 1 - IoU.

    Returns ``(anchors, mean_iou)`` with anchors sorted by area. Solutions
    for 1..k clusters are built in turn and each k also tries the previous
    best plus one farthest box, so mean IoU never drops as k grows.
    """
    B = np.asarray(boxes, dtype=float).reshape(-1, 2)
    if len(B) == 0 or np.any(B <= 0):
        raise ParameterError("boxes must be non-empty with positive sizes")
    distinct = len(np.unique(B, axis=0))
    if not (1 <= k <= distinct):
        raise ParameterError(f"k={k} must be between 1 and {distinct}")

    rng = np.random.default_rng(seed)
    best_prev = None
    for kk in range(1, k + 1):
        candidates = []
        for _ in range(restarts):
            seedset = _farthest_point_seed(B, kk, rng)
            candidates.append(_lloyd(B, seedset))
        if best_prev is not None:
            grown = _farthest_point_seed(B, kk, rng, start=best_prev)
            candidates.append(grown)
            candidates.append(_lloyd(B, grown))
        best_prev = max(candidates, key=lambda a: _mean_best_iou(B, a))
    anchors = best_prev[np.argsort(best_prev[:, 0] * best_prev[:, 1], kind="stable")]
    return anchors, _mean_best_iou(B, anchors)


# --- detection opportunities ----------------------------------------------


@dataclass
class Opportunity:
    start: int
    end: int
    ticks: list[Mapping[str, Optional[str]]] = field(default_factory=list)


def opportunity_analysis(
    log: Sequence[Opportunity], target: TargetClass = TargetClass.DRONE
) -> dict[str, float]:
    """Fraction of opportunities in which each source output ``target`` at least once."""
    ordered = sorted(log, key=lambda o: o.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ParameterError("opportunity intervals overlap")
    sources = sorted({s for o in log for tick in o.ticks for s in tick})
    if not log:
        return {}
    out = {}
    for s in sources:
        hits = sum(any(tick.get(s) == target.value for tick in o.ticks) for o in log)
        out[s] = hits / len(log)
    return out


# --- file formats ----------------------------------------------------------


def _parse_class(name: str) -> TargetClass:
    try:
        c = TargetClass(name)
    except ValueError as exc:
        raise ParameterError(f"unknown class {name!r}") from exc
    if c not in VISION_CLASSES:
        raise ParameterError(f"class {name!r} is not an image class")
    return c


def read_ground_truth_csv(path) -> dict[str, GroundTruthFrame]:
    """Columns: frame, class, x, y, w, h, bin (bin may be empty)."""
    frames: dict[str, GroundTruthFrame] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            frame = row["frame"].strip()
            g = frames.setdefault(frame, GroundTruthFrame(frame))
            cls_name = (row.get("class") or "").strip()
            if not cls_name:
                continue
            b = (row.get("bin") or "").strip()
            g.objects.append(
                GroundTruthObject(
                    _parse_class(cls_name),
                    BBox(*(float(row[k]) for k in ("x", "y", "w", "h"))),
                    DriBin(b) if b else None,
                )
            )
    return frames


def read_predictions(path) -> list[ScoredBox]:
    """CSV (frame, class, x, y, w, h, confidence) or JSONL of detection records."""
    p = Path(path)
    out = []
    if p.suffix in (".jsonl", ".json"):
        for line in p.read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            if d.get("bbox") is None:
                continue
            frame = str(d.get("frame", d.get("t")))
            out.append(ScoredBox(frame, _parse_class(d["class"]), BBox(*d["bbox"]), float(d["confidence"])))
        return out
    with open(p, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                ScoredBox(
                    row["frame"].strip(),
                    _parse_class(row["class"].strip()),
                    BBox(*(float(row[k]) for k in ("x", "y", "w", "h"))),
                    float(row["confidence"]),
                )
            )
    return out


def pr_curve_svg(curves: Mapping[str, PrCurve], size: int = 320) -> str:
    """Minimal standalone SVG of one or more PR curves."""
    pad = 30
    span = size - 2 * pad
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#000"/>',
        f'<text x="{size / 2}" y="{size - 5}" text-anchor="middle" font-size="11">recall</text>',
        f'<text x="10" y="{size / 2}" font-size="11" transform="rotate(-90 10 {size / 2})">precision</text>',
    ]
    for i, (name, c) in enumerate(curves.items()):
        pts = " ".join(
            f"{pad + r * span:.2f},{pad + (1 - p) * span:.2f}" for r, p in zip(c.recall, c.precision)
        )
        color = colors[i % len(colors)]
        if pts:
            parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{pad + 5}" y="{pad + 14 + 12 * i}" font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
