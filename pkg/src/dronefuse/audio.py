"""MFCC features over one-second buffers and a baseline audio classifier.

The classifier interface matches what the audio worker needs: train on
per-clip feature matrices, predict one of Drone / Helicopter / Background
with a confidence.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.fft import dct

from .core import AUDIO_CLASSES, ParameterError, TargetClass

SAMPLE_RATE = 44100
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = SAMPLE_RATE
    window_length: int = 1323  # 30 ms
    overlap: int = 882  # 20 ms
    num_coeffs: int = 13
    num_mel_filters: int = 32
    low_freq: float = 0.0
    high_freq: float | None = None

    def __post_init__(self):
        if not (0 <= self.overlap < self.window_length):
            raise ParameterError("overlap must be smaller than the window length")
        if not (1 <= self.num_coeffs <= self.num_mel_filters):
            raise ParameterError("need 1 <= num_coeffs <= num_mel_filters")

    @classmethod
    def for_rate(cls, sample_rate: int) -> "MfccConfig":
        """30 ms windows with 20 ms overlap at any sample rate."""
        return cls(sample_rate, int(round(0.03 * sample_rate)), int(round(0.02 * sample_rate)))

    @property
    def hop(self) -> int:
        return self.window_length - self.overlap

    @property
    def nfft(self) -> int:
        n = 1
        while n < self.window_length:
            n *= 2
        return n

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            return 0
        return (n_samples - self.window_length) // self.hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Triangular HTK-mel filters sampled at the FFT bin frequencies.

    Shape is ``(num_mel_filters, nfft // 2 + 1)``; filters have unit peak.
    """
    high = cfg.high_freq if cfg.high_freq is not None else cfg.sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(high), cfg.num_mel_filters + 2))
    freqs = np.arange(cfg.nfft // 2 + 1) * cfg.sample_rate / cfg.nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    n = cfg.num_frames(len(samples))
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop * np.arange(n)[:, None]
    return samples[idx]


def mfcc(buffer, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """MFCCs c1..c13 per frame, shape ``(n_frames, num_coeffs)``.

    Hamming window, zero-padded FFT magnitude, mel filterbank, log with a
    1e-10 floor, orthonormal DCT-II. The zeroth coefficient (log energy)
    is dropped.
    """
    x = np.asarray(buffer, dtype=np.float64)
    if x.ndim != 1 or len(x) < cfg.window_length:
        raise ParameterError("buffer must be 1-D and at least one window long")
    frames = frame_signal(x, cfg) * np.hamming(cfg.window_length)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.nfft, axis=1))
    energies = spectrum @ mel_filterbank(cfg).T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)
    return ceps[:, 1 : cfg.num_coeffs + 1]


def slice_clips(clip, sample_rate: int = SAMPLE_RATE, window_s: float = 1.0, step_s: float = 0.5):
    """Cut a clip into one-second buffers starting every half second.

    Only windows that fit entirely inside the clip are returned.
    """
    x = np.asarray(clip)
    win = int(round(window_s * sample_rate))
    step = int(round(step_s * sample_rate))
    if len(x) < win:
        raise ParameterError(f"clip of {len(x)} samples is shorter than one window ({win})")
    starts = range(0, len(x) - win + 1, step)
    return [x[s : s + win].copy() for s in starts]


class AudioClassifier(Protocol):
    def train(self, features: Sequence[np.ndarray], labels: Sequence[TargetClass]) -> None: ...

    def predict(self, features: np.ndarray) -> tuple[TargetClass, float]: ...


class BaselineClassifier:
    """Nearest-centroid classifier on time-averaged, standardized MFCCs.

    Confidence is the softmax of negative distances to the class centroids.
    """

    classes = AUDIO_CLASSES

    def __init__(self):
        self.mu: np.ndarray | None = None
        self.sigma: np.ndarray | None = None
        self.centroids: np.ndarray | None = None

    @staticmethod
    def _pool(features) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        return f.mean(axis=0) if f.ndim == 2 else f

    def train(self, features, labels) -> "BaselineClassifier":
        X = np.stack([self._pool(f) for f in features])
        y = [TargetClass(lbl) for lbl in labels]
        missing = [c.value for c in self.classes if c not in y]
        if missing:
            raise ParameterError(f"no training samples for classes {missing}")
        bad = {c.value for c in y} - {c.value for c in self.classes}
        if bad:
            raise ParameterError(f"labels outside the audio class set: {sorted(bad)}")
        self.mu = X.mean(axis=0)
        sd = X.std(axis=0)
        self.sigma = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mu) / self.sigma
        yarr = np.array([c.value for c in y])
        self.centroids = np.stack([Z[yarr == c.value].mean(axis=0) for c in self.classes])
        return self

    def probabilities(self, features) -> np.ndarray:
        if self.centroids is None:
            raise RuntimeError("classifier is not trained")
        z = (self._pool(features) - self.mu) / self.sigma
        d = np.linalg.norm(self.centroids - z, axis=1)
        e = np.exp(-(d - d.min()))
        return e / e.sum()

    def predict(self, features) -> tuple[TargetClass, float]:
        p = self.probabilities(features)
        i = int(np.argmax(p))
        return self.classes[i], float(p[i])


def baseline_train(features, labels) -> BaselineClassifier:
    return BaselineClassifier().train(features, labels)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV as floats in [-1, 1]; stereo is averaged to mono."""
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise ParameterError("only 16-bit PCM WAV is supported")
        rate = w.getframerate()
        raw = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
        channels = w.getnchannels()
    data = raw.astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return data, rate


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def dump_features_csv(path, features_per_buffer: Sequence[np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        ncoef = features_per_buffer[0].shape[1] if len(features_per_buffer) else 13
        out.writerow(["buffer", "frame"] + [f"c{i}" for i in range(1, ncoef + 1)])
        for b, feats in enumerate(features_per_buffer):
            for f, row in enumerate(feats):
                out.writerow([b, f] + [repr(float(v)) for v in row])
