"""Constant-velocity Kalman multi-object tracker for fish-eye blobs.

State per track is ``(x, vx, y, vy)`` in pixels and pixels/frame. Each
frame: predict every track, assign blobs to predictions by Euclidean
distance, correct matched tracks, age the rest, drop lost tracks and start
new ones from leftover blobs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ParameterError

F = np.array(
    [
        [1.0, 1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class KalmanConfig:
    initial_estimate_error: tuple[float, float] = (200.0, 200.0)
    motion_noise: tuple[float, float] = (50.0, 50.0)
    measurement_noise: float = 100.0

    def __post_init__(self):
        vals = (*self.initial_estimate_error, *self.motion_noise, self.measurement_noise)
        if any(v <= 0 for v in vals):
            raise ParameterError("Kalman variances must be positive")

    @property
    def P0(self) -> np.ndarray:
        loc, vel = self.initial_estimate_error
        return np.diag([loc, vel, loc, vel])

    @property
    def Q(self) -> np.ndarray:
        loc, vel = self.motion_noise
        return np.diag([loc, vel, loc, vel])

    @property
    def R(self) -> np.ndarray:
        return self.measurement_noise * np.eye(2)


@dataclass(frozen=True)
class TrackerConfig:
    non_assignment_cost: float = 30.0
    delete_after_invisible: int = 5
    confirm_after_visible: int = 3
    min_visibility_ratio: float = 0.6

    def __post_init__(self):
        if (
            self.non_assignment_cost <= 0
            or self.delete_after_invisible <= 0
            or self.confirm_after_visible <= 0
            or not (0 < self.min_visibility_ratio <= 1)
        ):
            raise ParameterError("tracker settings must be positive")


@dataclass(frozen=True)
class Track:
    id: int
    state: np.ndarray
    covariance: np.ndarray
    age: int = 1
    total_visible: int = 1
    consecutive_invisible: int = 0
    history: tuple = ()

    @property
    def position(self) -> tuple[float, float]:
        return (float(self.state[0]), float(self.state[2]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.state[1]), float(self.state[3]))

    def confirmed(self, cfg: TrackerConfig) -> bool:
        return self.total_visible >= cfg.confirm_after_visible

    def snapshot(self) -> dict:
        x, y = self.position
        vx, vy = self.velocity
        return {
            "id": self.id,
            "x": x,
            "y": y,
            "vx": vx,
            "vy": vy,
            "age": self.age,
            "visible": self.total_visible,
            "history_len": len(self.history),
        }


def new_track(track_id: int, centroid, t: int, cfg: KalmanConfig = KalmanConfig()) -> Track:
    """Start a track at ``centroid`` with zero velocity."""
    x, y = centroid
    state = np.array([x, 0.0, y, 0.0], dtype=float)
    return Track(track_id, state, cfg.P0.copy(), history=((t, (float(x), float(y))),))


def kf_predict(track: Track, cfg: KalmanConfig = KalmanConfig()) -> Track:
    state = F @ track.state
    P = F @ track.covariance @ F.T + cfg.Q
    return replace(track, state=state, covariance=0.5 * (P + P.T))


def kf_update(track: Track, z, cfg: KalmanConfig = KalmanConfig()) -> Track:
    z = np.asarray(z, dtype=float)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise ParameterError(f"measurement must be two finite numbers, got {z}")
    P = track.covariance
    S = H @ P @ H.T + cfg.R
    K = P @ H.T @ np.linalg.inv(S)
    state = track.state + K @ (z - H @ track.state)
    IKH = np.eye(4) - K @ H
    # Joseph form keeps P symmetric positive definite.
    P = IKH @ P @ IKH.T + K @ cfg.R @ K.T
    return replace(track, state=state, covariance=0.5 * (P + P.T))


def kalman_gain(track: Track, cfg: KalmanConfig = KalmanConfig()) -> np.ndarray:
    P = track.covariance
    return P @ H.T @ np.linalg.inv(H @ P @ H.T + cfg.R)


@dataclass(frozen=True)
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]
    cost: float


def assign(
    track_positions: Sequence[tuple[float, float]],
    detections: Sequence[tuple[float, float]],
    non_assignment_cost: float = 30.0,
) -> Assignment:
    """Minimum-cost matching with a per-item cost for leaving things unmatched.

    Pairing a track and a detection costs their Euclidean distance; leaving
    either unpaired costs ``non_assignment_cost`` each.
    """
    n, m = len(track_positions), len(detections)
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)), non_assignment_cost * (n + m))
    T = np.asarray(track_positions, dtype=float).reshape(n, 2)
    D = np.asarray(detections, dtype=float).reshape(m, 2)
    dist = np.linalg.norm(T[:, None, :] - D[None, :, :], axis=2)

    c = non_assignment_cost
    big = 1e9 + dist.max() + c
    cost = np.full((n + m, m + n), big)
    cost[:n, :m] = dist
    cost[:n, m:] = np.where(np.eye(n, dtype=bool), c, big)
    cost[n:, :m] = np.where(np.eye(m, dtype=bool), c, big)
    cost[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(cost)

    matches, un_t, un_d = [], [], []
    total = 0.0
    for r, col in zip(rows, cols):
        if r < n and col < m:
            matches.append((int(r), int(col)))
            total += dist[r, col]
        elif r < n:
            un_t.append(int(r))
            total += c
        elif col < m:
            un_d.append(int(col))
            total += c
    matches.sort()
    return Assignment(matches, sorted(un_t), sorted(un_d), total)


@dataclass
class TrackerState:
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 1
    last_t: Optional[int] = None


class MultiObjectTracker:
    """Owns the tracker state for one fish-eye stream."""

    def __init__(
        self,
        kalman: KalmanConfig = KalmanConfig(),
        config: TrackerConfig = TrackerConfig(),
    ):
        self.kalman = kalman
        self.config = config
        self.state = TrackerState()

    def step(self, centroids: Sequence[tuple[float, float]], t: int) -> Optional[Track]:
        self.state, best = tracker_step(self.state, centroids, t, self.kalman, self.config)
        return best

    @property
    def tracks(self) -> list[Track]:
        return list(self.state.tracks)


def tracker_step(
    state: TrackerState,
    centroids: Sequence[tuple[float, float]],
    t: int,
    kalman: KalmanConfig = KalmanConfig(),
    cfg: TrackerConfig = TrackerConfig(),
) -> tuple[TrackerState, Optional[Track]]:
    """Advance the tracker by one frame and pick the best confirmed track.

    ``centroids`` may also be a list of blobs; their ``centroid`` is used.
    """
    if state.last_t is not None and t < state.last_t:
        raise ParameterError(f"time went backwards: {t} < {state.last_t}")
    dets = [getattr(c, "centroid", c) for c in centroids]

    predicted = [kf_predict(tr, kalman) for tr in state.tracks]
    result = assign([tr.position for tr in predicted], dets, cfg.non_assignment_cost)

    updated: dict[int, Track] = {}
    for ti, di in result.matches:
        tr = kf_update(predicted[ti], dets[di], kalman)
        updated[ti] = replace(
            tr,
            age=tr.age + 1,
            total_visible=tr.total_visible + 1,
            consecutive_invisible=0,
            history=tr.history + ((t, tr.position),),
        )
    for ti in result.unmatched_tracks:
        tr = predicted[ti]
        updated[ti] = replace(
            tr,
            age=tr.age + 1,
            consecutive_invisible=tr.consecutive_invisible + 1,
            history=tr.history + ((t, tr.position),),
        )

    survivors = []
    for ti in range(len(predicted)):
        tr = updated[ti]
        lost = tr.consecutive_invisible >= cfg.delete_after_invisible
        flaky = not tr.confirmed(cfg) and tr.total_visible / tr.age < cfg.min_visibility_ratio
        if not (lost or flaky):
            survivors.append(tr)

    next_id = state.next_id
    for di in result.unmatched_detections:
        survivors.append(new_track(next_id, dets[di], t, kalman))
        next_id += 1

    confirmed = [tr for tr in survivors if tr.confirmed(cfg)]
    best = min(confirmed, key=lambda tr: (-len(tr.history), tr.id), default=None)
    return TrackerState(survivors, next_id, t), best

