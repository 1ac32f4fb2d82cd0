"""Frame-level acoustic measures at 1 ms resolution.

Each frame is described by eight measures computed over two Hann windows
(1 ms and 5 ms) centred on the frame, plus the first difference of every
measure: 2 windows x 8 measures x 2 = 32 dimensions with the default spec.
This approximates the classic hand-crafted VOT feature set; feature matrices
produced elsewhere can be injected through :func:`votseg.datakit.load_precomputed`.
"""

from __future__ import annotations

import logging
import warnings
import wave
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, StorageError
from .segmentation import FeatureSequence

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_MS = 1.0
MEASURES = ("log_energy", "low_band", "mid_band", "high_band", "wiener_entropy", "centroid", "max_abs", "zcr")


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise FormatError(f"audio must be mono (1-D samples), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise FormatError("audio contains non-finite samples")
        object.__setattr__(self, "samples", x)
        if self.duration_ms < 10:
            raise FormatError(f"audio too short: {self.duration_ms:.2f} ms < 10 ms")

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FeatureSpec:
    window_sizes_ms: tuple = (1.0, 5.0)
    bands_hz: tuple = ((0.0, 500.0), (500.0, 3000.0), (3000.0, 8000.0))
    floor_db: float = -80.0
    n_fft: int = 512
    deltas: bool = True

    @property
    def n_features(self) -> int:
        return len(self.window_sizes_ms) * len(MEASURES) * (2 if self.deltas else 1)

    def names(self) -> list[str]:
        base = [f"{m}@{w:g}ms" for w in self.window_sizes_ms for m in MEASURES]
        return base + [f"d_{n}" for n in base] if self.deltas else base


def read_wav(path) -> AudioClip:
    """16-bit linear PCM, mono, 16 kHz. Anything else is a FormatError."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (OSError, EOFError) as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    except wave.Error as e:
        raise FormatError(f"{path}: not a PCM WAV file ({e})") from e
    if channels != 1:
        raise FormatError(f"{path}: channels={channels}, expected mono")
    if width != 2:
        raise FormatError(f"{path}: sample width={8 * width} bits, expected 16")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate={rate} Hz, expected {SAMPLE_RATE}")
    return AudioClip(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def _frame_windows(x: np.ndarray, hop: int, width: int, n_frames: int) -> np.ndarray:
    """Stack zero-padded windows of ``width`` samples centred on each frame."""
    left = (width - hop) // 2
    padded = np.concatenate([np.zeros(left + width), x, np.zeros(width + width)])
    starts = np.arange(n_frames) * hop + width  # offset of x inside padded is left + width
    idx = starts[:, None] + np.arange(width)[None, :]
    return padded[idx]


def _window_measures(frames: np.ndarray, sr: int, spec: FeatureSpec) -> np.ndarray:
    width = frames.shape[1]
    taper = np.hanning(width + 2)[1:-1]  # drop the zero endpoints
    power = np.abs(np.fft.rfft(frames * taper, n=max(spec.n_fft, width), axis=1)) ** 2
    freqs = np.fft.rfftfreq(max(spec.n_fft, width), 1.0 / sr)
    floor_lin = 10.0 ** (spec.floor_db / 10.0)

    def to_db(p):
        return np.maximum(10.0 * np.log10(np.maximum(p, floor_lin)), spec.floor_db)

    out = np.empty((frames.shape[0], len(MEASURES)))
    out[:, 0] = to_db(np.mean(frames**2, axis=1))
    for k, (lo, hi) in enumerate(spec.bands_hz):
        sel = (freqs >= lo) & (freqs < hi) if hi < sr / 2 else (freqs >= lo)
        out[:, 1 + k] = to_db(power[:, sel].sum(axis=1) / width)
    total = power.sum(axis=1)
    live = total > 0
    geo = np.zeros_like(total)
    with np.errstate(divide="ignore"):
        logp = np.log(np.maximum(power, 1e-300))
    geo[live] = np.exp(logp[live].mean(axis=1))
    arith = power.mean(axis=1)
    went = np.zeros_like(total)
    # log spectral flatness: 0 for white noise, very negative for tones; 0 for silence
    went[live] = np.log(np.maximum(geo[live], 1e-300) / arith[live])
    out[:, 4] = np.maximum(went, np.log(1e-300))
    cent = np.zeros_like(total)
    cent[live] = (power[live] * freqs).sum(axis=1) / total[live]
    out[:, 5] = cent
    out[:, 6] = np.abs(frames).max(axis=1)
    signs = np.signbit(frames)
    nz = frames != 0
    crossings = (signs[:, 1:] != signs[:, :-1]) & nz[:, 1:] & nz[:, :-1]
    out[:, 7] = crossings.sum(axis=1) / max(width - 1, 1)
    return out


def extract(audio: AudioClip, spec: FeatureSpec | None = None) -> FeatureSequence:
    spec = spec or FeatureSpec()
    if audio.sample_rate_hz != SAMPLE_RATE:
        raise FormatError(f"sample_rate_hz={audio.sample_rate_hz}, expected {SAMPLE_RATE}")
    hop = int(round(audio.sample_rate_hz * FRAME_MS / 1000.0))
    n_frames = len(audio.samples) // hop
    blocks = []
    for w_ms in spec.window_sizes_ms:
        width = int(round(audio.sample_rate_hz * w_ms / 1000.0))
        frames = _frame_windows(audio.samples, hop, width, n_frames)
        blocks.append(_window_measures(frames, audio.sample_rate_hz, spec))
    feats = np.concatenate(blocks, axis=1)
    if spec.deltas:
        delta = np.zeros_like(feats)
        delta[1:] = feats[1:] - feats[:-1]
        feats = np.concatenate([feats, delta], axis=1)
    return FeatureSequence(feats, FRAME_MS)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray  # boolean mask over the original dimensions

    @property
    def input_dim(self) -> int:
        return int(self.keep.size)

    @property
    def output_dim(self) -> int:
        return int(self.keep.sum())

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "keep": self.keep.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["keep"], bool))


def fit_norm(train_features: Sequence[FeatureSequence], min_std: float = 1e-8) -> NormStats:
    if len(train_features) == 0:
        raise DataError("cannot fit normalisation on an empty training set")
    dims = {x.D for x in train_features}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensions in training set: {sorted(dims)}")
    X = np.concatenate([x.frames for x in train_features], axis=0)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > min_std
    if not keep.all():
        dropped = np.flatnonzero(~keep).tolist()
        warnings.warn(f"dropping zero-variance feature dimensions {dropped}", stacklevel=2)
    return NormStats(mean[keep], std[keep], keep)


def apply_norm(x: FeatureSequence, stats: NormStats) -> FeatureSequence:
    if x.D != stats.input_dim:
        raise DataError(f"feature dimension {x.D} does not match normalisation stats ({stats.input_dim})")
    return FeatureSequence((x.frames[:, stats.keep] - stats.mean) / stats.std, x.frame_period_ms)
