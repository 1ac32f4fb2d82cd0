"""Manifests, annotations, feature files, speaker splits and synthetic corpora.

Manifest files are JSON lines, one utterance per line::

    {"utterance_id": "u1", "corpus_id": "pg", "speaker_id": "s03",
     "features": "feats/u1.txt",
     "annotation": {"t_pv": null, "t_b": 31.0, "t_v": 74.0}}

``audio`` may replace ``features`` (a 16 kHz mono 16-bit WAV file). Relative
paths resolve against the manifest's directory. ``t_pv`` is null (or the
legacy sentinel ``-1``) for positive VOT. ``annotation`` may be omitted for
prediction-only manifests. Times are in milliseconds from the start of the
utterance window.

Feature files are plain text: a header line ``T D`` followed by ``T`` rows of
``D`` whitespace-separated reals.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, StorageError
from .segmentation import FeatureSequence, Segmentation

log = logging.getLogger(__name__)

ABSENT_PREVOICING = -1


@dataclass(frozen=True)
class Annotation:
    t_b: float
    t_v: float
    t_pv: float | None = None

    @property
    def vot_type(self) -> str:
        return "negative" if self.t_pv is not None else "positive"

    @property
    def vot_ms(self) -> float:
        if self.t_pv is None:
            return float(self.t_v - self.t_b)
        return float(self.t_pv - self.t_b)

    def problems(self, duration_ms: float | None = None) -> list[str]:
        out = []
        times = [self.t_b, self.t_v] if self.t_pv is None else [self.t_pv, self.t_b, self.t_v]
        if any(not math.isfinite(t) for t in times):
            out.append("non-finite annotation time")
            return out
        if self.t_pv is not None and not self.t_pv < self.t_b:
            out.append(f"t_pv={self.t_pv} must precede t_b={self.t_b}")
        if not self.t_b < self.t_v:
            out.append(f"t_b={self.t_b} must precede t_v={self.t_v}")
        lo = min(times)
        hi = max(times)
        if lo < 0 or (duration_ms is not None and hi > duration_ms):
            bound = "" if duration_ms is None else f", {duration_ms}"
            out.append(f"annotation times must lie in [0{bound}] ms")
        return out

    def segmentation(self, frame_period_ms: float = 1.0) -> Segmentation:
        """Gold boundary pair in 1-based frames (frame t starts at (t-1)*period)."""
        def frame(t):
            return int(round(t / frame_period_ms)) + 1

        if self.t_pv is None:
            return Segmentation(frame(self.t_b), frame(self.t_v))
        return Segmentation(frame(self.t_pv), frame(self.t_b))

    def to_json(self) -> dict:
        return {"t_pv": self.t_pv, "t_b": self.t_b, "t_v": self.t_v}

    @classmethod
    def from_json(cls, obj: dict) -> "Annotation":
        t_pv = obj.get("t_pv")
        if t_pv is not None and float(t_pv) == ABSENT_PREVOICING:
            t_pv = None
        return cls(t_b=float(obj["t_b"]), t_v=float(obj["t_v"]), t_pv=None if t_pv is None else float(t_pv))


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    corpus_id: str
    speaker_id: str
    features: str | None = None
    audio: str | None = None
    annotation: Annotation | None = None
    duration_ms: float | None = None

    def __post_init__(self):
        if (self.features is None) == (self.audio is None):
            raise DataError(f"{self.utterance_id}: exactly one of 'features' or 'audio' must be given")

    @property
    def source(self) -> str:
        return self.features if self.features is not None else self.audio

    def to_json(self) -> dict:
        obj = {"utterance_id": self.utterance_id, "corpus_id": self.corpus_id, "speaker_id": self.speaker_id}
        if self.features is not None:
            obj["features"] = self.features
        else:
            obj["audio"] = self.audio
        if self.duration_ms is not None:
            obj["duration_ms"] = self.duration_ms
        if self.annotation is not None:
            obj["annotation"] = self.annotation.to_json()
        return obj


@dataclass
class Utterance:
    """A manifest record together with its loaded features."""

    record: ManifestRecord
    features: FeatureSequence

    @property
    def gold(self) -> Segmentation:
        if self.record.annotation is None:
            raise DataError(f"{self.record.utterance_id}: no gold annotation")
        seg = self.record.annotation.segmentation(self.features.frame_period_ms)
        if seg.y2 > self.features.T:
            raise DataError(f"{self.record.utterance_id}: annotation extends past the last frame ({self.features.T})")
        return seg


# -- feature files -----------------------------------------------------------


def write_feature_file(path, x: FeatureSequence | np.ndarray) -> None:
    frames = x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    T, D = frames.shape
    lines = [f"{T} {D}"]
    # repr() is the shortest round-trip decimal form, so reading back is bit-exact
    lines.extend(" ".join(repr(float(v)) for v in row) for row in frames)
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def load_precomputed(path, frame_period_ms: float = 1.0) -> FeatureSequence:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise StorageError(f"cannot read feature file {path}: {e}") from e
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty feature file", path, 1)
    head = lines[0].split()
    try:
        T, D = int(head[0]), int(head[1])
        if len(head) != 2 or T < 1 or D < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise ParseError(f"bad header {lines[0]!r}, expected 'T D'", path, 1) from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != D:
            raise ParseError(f"expected {D} values, found {len(parts)}", path, lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-numeric value in row", path, lineno) from None
    if len(rows) != T:
        raise ParseError(f"header promises {T} rows, found {len(rows)}", path, len(lines))
    return FeatureSequence(np.array(rows, dtype=np.float64), frame_period_ms)


# -- manifests ---------------------------------------------------------------


def _resolve(base: Path, p: str) -> str:
    return p if os.path.isabs(p) else str(base / p)


def parse_record(obj: dict, base: Path | None = None) -> ManifestRecord:
    uid = str(obj.get("utterance_id", "<missing id>"))
    for key in ("utterance_id", "corpus_id", "speaker_id"):
        if key not in obj:
            raise DataError(f"{uid}: missing field {key!r}")
    ann = None
    if obj.get("annotation") is not None:
        try:
            ann = Annotation.from_json(obj["annotation"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{uid}: malformed annotation ({e})") from None
    features, audio = obj.get("features"), obj.get("audio")
    if base is not None:
        features = None if features is None else _resolve(base, features)
        audio = None if audio is None else _resolve(base, audio)
    duration = obj.get("duration_ms")
    return ManifestRecord(
        utterance_id=uid,
        corpus_id=str(obj["corpus_id"]),
        speaker_id=str(obj["speaker_id"]),
        features=features,
        audio=audio,
        annotation=ann,
        duration_ms=None if duration is None else float(duration),
    )


def validate_records(records: Sequence[ManifestRecord], check_files: bool = True) -> None:
    problems = []
    seen = set()
    for r in records:
        if r.utterance_id in seen:
            problems.append(f"{r.utterance_id}: duplicate utterance_id")
        seen.add(r.utterance_id)
        if r.annotation is not None:
            problems.extend(f"{r.utterance_id}: {p}" for p in r.annotation.problems(r.duration_ms))
        if check_files and not os.path.exists(r.source):
            problems.append(f"{r.utterance_id}: missing file {r.source}")
    if problems:
        raise DataError("invalid manifest:\n  " + "\n  ".join(problems))


def load_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise StorageError(f"cannot read manifest {path}: {e}") from e
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", path, lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("record must be a JSON object", path, lineno)
        if obj.get("kind") == "header":
            continue
        records.append(parse_record(obj, path.parent))
    validate_records(records, check_files=check_files)
    return records


def write_manifest(path, records: Iterable[ManifestRecord], relative_to=None, header: dict | None = None) -> None:
    base = Path(relative_to) if relative_to is not None else None
    lines = [] if header is None else [json.dumps({"kind": "header", **header}, sort_keys=True)]
    for r in records:
        if base is not None:
            if r.features is not None:
                r = replace(r, features=os.path.relpath(r.features, base))
            else:
                r = replace(r, audio=os.path.relpath(r.audio, base))
        lines.append(json.dumps(r.to_json(), sort_keys=True))
    try:
        Path(path).write_text("".join(line + "\n" for line in lines))
    except OSError as e:
        raise StorageError(f"cannot write manifest {path}: {e}") from e


def load_utterances(records: Sequence[ManifestRecord], spec=None) -> list[Utterance]:
    """Attach features to records, extracting from audio where needed."""
    from . import frontend

    out = []
    for r in records:
        if r.features is not None:
            x = load_precomputed(r.features)
        else:
            x = frontend.extract(frontend.read_wav(r.audio), spec)
        if r.annotation is not None:
            bad = r.annotation.problems(x.T * x.frame_period_ms)
            if bad:
                raise DataError(f"{r.utterance_id}: " + "; ".join(bad))
        out.append(Utterance(r, x))
    return out


# -- speaker splits ----------------------------------------------------------


def split_by_speaker(
    records: Sequence, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list, list, list]:
    """Assign whole speakers to train/validation/test.

    Works on ``ManifestRecord`` or ``Utterance`` items. Speaker counts per split
    follow the fractions with largest-remainder rounding; every split with a
    positive fraction gets at least one speaker.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ConfigError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")

    def speaker(item):
        return (item.record if isinstance(item, Utterance) else item).speaker_id

    speakers = sorted({speaker(r) for r in records})
    n = len(speakers)
    if n < 3:
        raise ConfigError(f"need at least 3 speakers for a three-way split, found {n}")
    rng = np.random.default_rng(seed)
    order = [speakers[i] for i in rng.permutation(n)]

    raw = [f * n for f in fractions]
    counts = [int(math.floor(v)) for v in raw]
    for i in sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if fractions[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    groups = [set(order[: counts[0]]), set(order[counts[0] : counts[0] + counts[1]]), set(order[counts[0] + counts[1] :])]
    return tuple([r for r in records if speaker(r) in g] for g in groups)


# -- synthetic corpora -------------------------------------------------------

LOW_BAND, HIGH_BAND, VOWEL, TOTAL = 0, 1, 2, 3
MIN_SEGMENT = 10


@dataclass
class SyntheticConfig:
    n_utterances: int = 1000
    negative_fraction: float = 0.2
    t_min: int = 100
    t_max: int = 300
    n_features: int = 8
    n_corpora: int = 1
    speakers_per_corpus: int = 20
    offset_scale: float = 1.0
    gain_spread: float = 0.3
    corpus_offsets: list | None = None
    corpus_gains: list | None = None
    noise_sd: float = 0.5
    seed: int = 0
    id_prefix: str = "syn"
    corpus_names: list | None = None

    def validate(self) -> None:
        if not 0 < self.negative_fraction < 1:
            raise ConfigError(f"negative_fraction must lie in (0, 1), got {self.negative_fraction}")
        if self.n_features < 4:
            raise ConfigError("synthetic corpora need at least 4 feature dimensions")
        if self.t_min < 5 * MIN_SEGMENT or self.t_max < self.t_min:
            raise ConfigError(f"need {5 * MIN_SEGMENT} <= t_min <= t_max")
        if self.n_corpora < 1 or self.n_utterances < 1 or self.speakers_per_corpus < 1:
            raise ConfigError("n_corpora, n_utterances and speakers_per_corpus must be positive")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")
        if self.corpus_names is not None and len(self.corpus_names) != self.n_corpora:
            raise ConfigError("corpus_names must have n_corpora entries")


def corpus_nuisance(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-corpus additive offsets (C x D) and gains (C,).

    A single corpus carries no nuisance unless offsets/gains are given.
    """
    C, D = cfg.n_corpora, cfg.n_features
    rng = np.random.default_rng([cfg.seed, 7919])
    if cfg.corpus_offsets is not None:
        offsets = np.asarray(cfg.corpus_offsets, dtype=np.float64).reshape(C, D)
    elif C == 1:
        offsets = np.zeros((1, D))
    else:
        offsets = rng.normal(0.0, cfg.offset_scale, size=(C, D))
    if cfg.corpus_gains is not None:
        gains = np.asarray(cfg.corpus_gains, dtype=np.float64).reshape(C)
    elif C == 1:
        gains = np.ones(1)
    else:
        gains = np.exp(rng.uniform(-cfg.gain_spread, cfg.gain_spread, size=C))
    return offsets, gains


def _draw_boundaries(rng, T: int, negative: bool) -> tuple[int | None, int, int]:
    """Planted frames (1-based) with every segment at least MIN_SEGMENT long."""
    room = T - 2 * MIN_SEGMENT - 1  # lead-in and tail
    if negative:
        prevoice = int(rng.integers(MIN_SEGMENT, min(100, room - MIN_SEGMENT) + 1))
        lag = int(rng.integers(MIN_SEGMENT, min(25, room - prevoice) + 1))
        span = prevoice + lag
    else:
        span = int(rng.integers(MIN_SEGMENT, min(100, room) + 1))
    start = int(rng.integers(MIN_SEGMENT + 1, T - MIN_SEGMENT - span + 1))
    if negative:
        return start, start + prevoice, start + prevoice + lag
    return None, start, start + span


def planted_signal(T: int, D: int, t_pv: int | None, t_b: int, t_v: int) -> np.ndarray:
    """Noise-free feature matrix with the three planted regimes."""
    x = np.zeros((T, D))
    i_pv = None if t_pv is None else t_pv - 1
    i_b, i_v = t_b - 1, t_v - 1
    if i_pv is not None:
        x[i_pv:i_b, LOW_BAND] = 3.0  # prevoicing murmur
    x[i_v:, LOW_BAND] = 4.0
    x[i_b : i_b + 3, HIGH_BAND] = 4.0  # burst transient
    x[i_b + 3 : i_v, HIGH_BAND] = 1.0  # aspiration / frication
    k = np.arange(T - i_v)
    x[i_v:, VOWEL] = 3.0 + np.sin(2 * np.pi * k / 8.0)
    x[:, TOTAL] = 0.5 * (x[:, LOW_BAND] + x[:, HIGH_BAND] + x[:, VOWEL])
    return x


def generate_synthetic(cfg: SyntheticConfig) -> list[Utterance]:
    """Seeded synthetic corpus with recoverable boundaries.

    Boundaries, class and speaker are drawn independently of the corpus, so the
    per-corpus offset/gain is pure nuisance.
    """
    cfg.validate()
    offsets, gains = corpus_nuisance(cfg)
    names = cfg.corpus_names or [f"corpus{c}" for c in range(cfg.n_corpora)]
    rng = np.random.default_rng(cfg.seed)
    out = []
    for n in range(cfg.n_utterances):
        c = int(rng.integers(cfg.n_corpora))
        spk = int(rng.integers(cfg.speakers_per_corpus))
        negative = bool(rng.random() < cfg.negative_fraction)
        T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        t_pv, t_b, t_v = _draw_boundaries(rng, T, negative)
        clean = planted_signal(T, cfg.n_features, t_pv, t_b, t_v)
        noise = rng.normal(0.0, cfg.noise_sd, size=clean.shape) if cfg.noise_sd > 0 else 0.0
        x = gains[c] * (clean + noise) + offsets[c]
        ann = Annotation(t_b=float(t_b - 1), t_v=float(t_v - 1), t_pv=None if t_pv is None else float(t_pv - 1))
        rec = ManifestRecord(
            utterance_id=f"{cfg.id_prefix}{n:05d}",
            corpus_id=names[c],
            speaker_id=f"{names[c]}_spk{spk:03d}",
            features=f"{cfg.id_prefix}{n:05d}.txt",
            annotation=ann,
            duration_ms=float(T),
        )
        out.append(Utterance(rec, FeatureSequence(x)))
    return out


def write_synthetic(
    utterances: Sequence[Utterance],
    out_dir,
    manifest_name: str = "manifest.jsonl",
    header: dict | None = None,
    write_features: bool = True,
) -> Path:
    """Write feature files under ``out_dir/features`` and a manifest beside them."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    try:
        feat_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {feat_dir}: {e}") from e
    records = []
    for u in utterances:
        path = feat_dir / f"{u.record.utterance_id}.txt"
        if write_features:
            write_feature_file(path, u.features)
        records.append(replace(u.record, features=str(path)))
    manifest = out_dir / manifest_name
    write_manifest(manifest, records, relative_to=out_dir, header=header)
    return manifest


def threshold_oracle(frames: np.ndarray, offset=None, gain: float = 1.0, run: int = 3) -> tuple[str, Segmentation]:
    """Hand-written boundary detector for synthetic features.

    Each onset is the first frame opening a run of ``run`` frames above a fixed
    threshold on its designated dimension. Prevoicing is declared when the
    low-band onset comes before the burst.
    """
    x = np.asarray(frames, dtype=np.float64)
    if offset is not None:
        x = (x - np.asarray(offset)) / gain
    T = x.shape[0]

    def onset(dim, thr, start=0):
        above = x[:, dim] > thr
        for t in range(start, T - run + 1):
            if above[t : t + run].all():
                return t + 1
        return None

    t_b = onset(HIGH_BAND, 2.5) or 1
    t_v = onset(VOWEL, 1.5, start=t_b) or T
    t_low = onset(LOW_BAND, 1.5)
    if t_low is not None and t_low < t_b - 2:
        return "negative", Segmentation(t_low, max(t_b, t_low + 1))
    return "positive", Segmentation(t_b, max(t_v, t_b + 1))
