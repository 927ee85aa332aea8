"""Camera preprocessing and moving-object extraction.

Images are 2-D float arrays (rows x cols) with intensities in [0, 1];
masks are boolean arrays of the same shape. The fish-eye pipeline runs
crop -> GMM foreground -> 3x3 opening -> blob analysis, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import BBox, ParameterError

_SE3 = np.ones((3, 3), dtype=bool)


def as_gray(img) -> np.ndarray:
    """Validate and return an image as a float64 2-D array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ParameterError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ParameterError("image values must be finite and in [0, 1]")
    return arr


def flat_field_correct(img, sigma: float = 30.0) -> np.ndarray:
    """Divide out low-frequency shading estimated with a Gaussian blur.

    The result is rescaled so its mean matches the input mean, then clipped.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    arr = as_gray(img)
    shading = ndimage.gaussian_filter(arr, sigma=sigma, mode="nearest", truncate=4.0)
    ratio = arr / np.maximum(shading, 1e-12)
    m = ratio.mean()
    if m > 0:
        ratio *= arr.mean() / m
    return np.clip(ratio, 0.0, 1.0)


def contrast_stretch(img, low_pct: float = 1.0, high_pct: float = 99.0) -> np.ndarray:
    """Map the 1st/99th percentiles to 0/1 and clamp the tails."""
    arr = as_gray(img)
    lo, hi = np.percentile(arr, [low_pct, high_pct])
    if hi <= lo:
        return arr.copy()
    return np.clip((arr - lo) / (hi - lo), 0.0, 1.0)


def crop_upper_half(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.shape[0] % 2:
        raise ParameterError(f"frame height {arr.shape[0]} is odd")
    return arr[: arr.shape[0] // 2].copy()


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    width: int
    height: int


def crop(img, rect: Optional[CropRect] = None) -> np.ndarray:
    """Crop to ``rect``; ``None`` keeps the top (sky) half."""
    if rect is None:
        return crop_upper_half(img)
    arr = np.asarray(img)
    h, w = arr.shape[:2]
    if rect.x < 0 or rect.y < 0 or rect.x + rect.width > w or rect.y + rect.height > h:
        raise ParameterError(f"crop {rect} exceeds frame {w}x{h}")
    return arr[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width].copy()


@dataclass(frozen=True)
class GmmConfig:
    num_modes: int = 5
    learning_rate: float = 0.05
    background_threshold: float = 0.85
    training_frames: int = 10
    match_distance: float = 2.5
    initial_variance: float = 0.01
    # Keeps matched variances from collapsing to zero on noiseless input.
    min_variance: float = 1e-4

    def __post_init__(self):
        if self.num_modes < 1:
            raise ParameterError("num_modes must be >= 1")
        if not (0 < self.learning_rate < 1):
            raise ParameterError("learning_rate must be in (0, 1)")
        if not (0 < self.background_threshold < 1):
            raise ParameterError("background_threshold must be in (0, 1)")
        if self.training_frames < 0 or self.match_distance <= 0:
            raise ParameterError("bad training_frames or match_distance")
        if self.initial_variance <= 0 or self.min_variance <= 0:
            raise ParameterError("variances must be positive")


@dataclass
class GmmModel:
    """Per-pixel mixture; arrays have shape (num_modes, rows, cols)."""

    weight: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    frames_seen: int = 0

    @classmethod
    def initialize(cls, frame, cfg: GmmConfig) -> "GmmModel":
        arr = as_gray(frame)
        k = cfg.num_modes
        weight = np.zeros((k,) + arr.shape)
        weight[0] = 1.0
        mean = np.zeros((k,) + arr.shape)
        mean[0] = arr
        var = np.full((k,) + arr.shape, cfg.initial_variance)
        return cls(weight, mean, var, frames_seen=1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape[1:]


def gmm_apply(model: Optional[GmmModel], frame, cfg: GmmConfig = GmmConfig()):
    """Classify a frame against the background mixture and update it.

    Returns ``(mask, model)``. The model is updated in place (it is owned by
    a single stream); pass ``None`` to start a new model from this frame.
    The mask is all False while the model is still within its training
    frames.
    """
    x = as_gray(frame)
    if model is None:
        model = GmmModel.initialize(x, cfg)
        return np.zeros(x.shape, dtype=bool), model
    if x.shape != model.shape:
        raise ParameterError(f"frame shape {x.shape} does not match model {model.shape}")

    rho = cfg.learning_rate
    w, mu, var = model.weight, model.mean, model.var
    k = w.shape[0]
    # Modes are ranked by w/sigma without reordering storage: ahead[i, j] says
    # mode i ranks before mode j, ties going to the lower index.
    key = w / np.sqrt(var)
    tie = np.tri(k, k, -1, dtype=bool).T[:, :, None, None]
    ahead = (key[:, None] > key[None]) | ((key[:, None] == key[None]) & tie)
    rank = ahead.sum(axis=0)
    cum_before = np.einsum("i...,ij...->j...", w, ahead)
    is_bg = cum_before <= cfg.background_threshold
    diff = x[None] - mu
    match = diff * diff <= (cfg.match_distance ** 2) * var
    foreground = ~np.any(match & is_bg, axis=0)

    # Update only the best-ranked matching mode.
    any_match = np.any(match, axis=0)
    match_rank = np.where(match, rank, k)
    onehot = (match_rank == match_rank.min(axis=0)[None]) & any_match[None]

    w *= 1.0 - rho
    w[onehot] += rho
    d = diff[onehot]
    mu[onehot] += rho * d
    var[onehot] += rho * (d * d - var[onehot])
    np.maximum(var, cfg.min_variance, out=var)

    # No mode matched: replace the lowest-ranked one with the current value.
    miss = ~any_match
    if miss.any():
        last = (rank == k - 1) & miss[None]
        w[last] = rho
        mu[last] = np.broadcast_to(x, w.shape)[last]
        var[last] = cfg.initial_variance
    w /= w.sum(axis=0, keepdims=True)
    model.frames_seen += 1
    if model.frames_seen <= cfg.training_frames:
        return np.zeros(x.shape, dtype=bool), model
    return foreground, model


def morph_open(mask, se: np.ndarray = _SE3) -> np.ndarray:
    """Binary opening (erosion then dilation) with a square element."""
    m = np.asarray(mask, dtype=bool)
    return ndimage.binary_opening(m, structure=se)


@dataclass(frozen=True)
class Blob:
    centroid: tuple[float, float]
    bbox: BBox
    area: int


def blob_analysis(mask, max_area: int = 1000) -> list[Blob]:
    """8-connected components no larger than ``max_area`` pixels.

    Blobs are ordered by their first pixel in raster order.
    """
    if max_area <= 0:
        raise ParameterError("max_area must be positive")
    m = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(m, structure=_SE3)
    blobs: list[Blob] = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        ys, xs = np.nonzero(labels[sl] == i)
        area = len(xs)
        if area > max_area:
            continue
        x0, y0 = sl[1].start, sl[0].start
        cx = float(xs.mean() + x0)
        cy = float(ys.mean() + y0)
        bbox = BBox(float(x0), float(y0), float(sl[1].stop - x0), float(sl[0].stop - y0))
        blobs.append(Blob((cx, cy), bbox, area))
    return blobs


@dataclass
class FisheyePipeline:
    """Crop, foreground detection, opening and blob extraction for one stream."""

    gmm: GmmConfig = field(default_factory=GmmConfig)
    max_blob_area: int = 1000
    crop_rect: Optional[CropRect] = None
    model: Optional[GmmModel] = None

    def process(self, frame) -> list[Blob]:
        sky = crop(frame, self.crop_rect)
        mask, self.model = gmm_apply(self.model, sky, self.gmm)
        return blob_analysis(morph_open(mask), self.max_blob_area)


def preprocess_ir(img, sigma: float = 30.0) -> np.ndarray:
    return contrast_stretch(flat_field_correct(img, sigma))


# --- fixture I/O -----------------------------------------------------------


def _read_netpbm_header(data: bytes, magic: bytes, want_maxval: bool):
    if not data.startswith(magic):
        raise ParameterError(f"not a {magic.decode()} file")
    tokens: list[bytes] = []
    pos = 2
    need = 3 if want_maxval else 2
    while len(tokens) < need:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return [int(t) for t in tokens], pos + 1


def write_pgm(path, img) -> None:
    arr = np.clip(np.round(as_gray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h, maxval), off = _read_netpbm_header(data, b"P5", True)
    if maxval > 255:
        raise ParameterError("only 8-bit PGM is supported")
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off).reshape(h, w)
    return arr.astype(np.float64) / maxval


def write_pbm(path, mask) -> None:
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    packed = np.packbits(m, axis=1)
    Path(path).write_bytes(b"P4\n%d %d\n" % (w, h) + packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h), off = _read_netpbm_header(data, b"P4", False)
    row_bytes = (w + 7) // 8
    packed = np.frombuffer(data, dtype=np.uint8, count=row_bytes * h, offset=off)
    return np.unpackbits(packed.reshape(h, row_bytes), axis=1)[:, :w].astype(bool)
