"""Structured prediction core for two-boundary segmentation.

A segmentation of a ``T``-frame utterance is a pair of 1-based frame indices
``1 <= y1 < y2 <= T``. A :class:`ScoreMatrix` holds a ``T x 2`` array whose
column 0 scores placing the first boundary at each frame and column 1 the
second boundary, so the score of a pair is ``s[y1, 0] + s[y2, 1]``.

Everything here is plain numpy and side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InputContractError

VotType = Literal["positive", "negative"]
VOT_TYPES: tuple[str, str] = ("positive", "negative")


@dataclass(frozen=True)
class FeatureSequence:
    """``T x D`` matrix of per-frame features at a fixed frame period."""

    frames: np.ndarray
    frame_period_ms: float = 1.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise InputContractError(f"feature matrix must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise InputContractError(f"need at least 2 frames, got {frames.shape[0]}")
        if frames.shape[1] < 1:
            raise InputContractError("feature dimension must be positive")
        if not np.all(np.isfinite(frames)):
            raise InputContractError("feature matrix contains non-finite values")
        if not self.frame_period_ms > 0:
            raise InputContractError("frame_period_ms must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, order=True)
class Segmentation:
    y1: int
    y2: int

    def __post_init__(self):
        if not (1 <= self.y1 < self.y2):
            raise InputContractError(f"invalid segmentation ({self.y1}, {self.y2}): need 1 <= y1 < y2")

    def check(self, T: int) -> None:
        if self.y2 > T:
            raise InputContractError(f"segmentation ({self.y1}, {self.y2}) exceeds T={T}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.y1, self.y2)


@dataclass(frozen=True)
class TaskLossConfig:
    tau_frames: int = 2

    def __post_init__(self):
        if int(self.tau_frames) != self.tau_frames or self.tau_frames < 0:
            raise InputContractError(f"tau_frames must be a nonnegative integer, got {self.tau_frames}")


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 2:
            raise InputContractError(f"score matrix must be T x 2, got shape {s.shape}")
        if s.shape[0] < 2:
            raise InputContractError(f"need T >= 2 to place two boundaries, got T={s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise InputContractError("score matrix contains non-finite values")
        object.__setattr__(self, "scores", s)

    @property
    def T(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class VotMeasurement:
    vot_ms: float
    vot_type: str
    boundaries: Segmentation
    type_prob: float = field(default=1.0)

    def __post_init__(self):
        if self.vot_type not in VOT_TYPES:
            raise InputContractError(f"unknown VOT type {self.vot_type!r}")
        if self.vot_type == "positive" and not self.vot_ms > 0:
            raise InputContractError("positive VOT must have vot_ms > 0")
        if self.vot_type == "negative" and not self.vot_ms < 0:
            raise InputContractError("negative VOT must have vot_ms < 0")
        if not 0.0 <= self.type_prob <= 1.0:
            raise InputContractError("type_prob must lie in [0, 1]")


def _as_scores(scores) -> np.ndarray:
    if isinstance(scores, ScoreMatrix):
        return scores.scores
    return ScoreMatrix(scores).scores


def _hinge(x):
    return np.maximum(0, x)


def task_loss(gold: Segmentation, pred: Segmentation, cfg: TaskLossConfig = TaskLossConfig(), T: int | None = None) -> float:
    """Tolerance-hinged absolute boundary error, summed over both boundaries."""
    if T is not None:
        gold.check(T)
        pred.check(T)
    tau = cfg.tau_frames
    return float(max(0, abs(gold.y1 - pred.y1) - tau) + max(0, abs(gold.y2 - pred.y2) - tau))


def _boundary_losses(T: int, gold: Segmentation, tau: int) -> tuple[np.ndarray, np.ndarray]:
    frames = np.arange(1, T + 1)
    return (
        _hinge(np.abs(frames - gold.y1) - tau).astype(np.float64),
        _hinge(np.abs(frames - gold.y2) - tau).astype(np.float64),
    )


def _best_pair(first: np.ndarray, second: np.ndarray) -> tuple[int, int, float]:
    """Maximise ``first[i] + second[j]`` over ``i < j`` (0-based).

    Ties go to the smallest ``i``, then the smallest ``j``. The suffix maximum of
    ``second`` gives the best partner for every ``i`` in one sweep.
    """
    suffix = np.maximum.accumulate(second[::-1])[::-1]
    cand = first[:-1] + suffix[1:]
    i = int(np.argmax(cand))  # argmax returns the first maximiser
    best = cand[i]
    j = i + 1 + int(np.argmax(second[i + 1 :] == suffix[i + 1]))
    return i, j, float(best)


def decode(scores) -> Segmentation:
    s = _as_scores(scores)
    i, j, _ = _best_pair(s[:, 0], s[:, 1])
    return Segmentation(i + 1, j + 1)


def loss_augmented_decode(scores, gold: Segmentation, cfg: TaskLossConfig = TaskLossConfig()) -> Segmentation:
    """Argmax of score plus task loss against ``gold``.

    The loss splits per boundary, so each column just gets its own loss term
    added before the usual pair search.
    """
    s = _as_scores(scores)
    gold.check(s.shape[0])
    l1, l2 = _boundary_losses(s.shape[0], gold, cfg.tau_frames)
    i, j, _ = _best_pair(s[:, 0] + l1, s[:, 1] + l2)
    return Segmentation(i + 1, j + 1)


def segmentation_score(scores, seg: Segmentation) -> float:
    s = _as_scores(scores)
    seg.check(s.shape[0])
    return float(s[seg.y1 - 1, 0] + s[seg.y2 - 1, 1])


def structural_hinge(scores, gold: Segmentation, cfg: TaskLossConfig = TaskLossConfig()) -> float:
    """Max-margin surrogate: ``max_y' [loss(gold, y') + score(y')] - score(gold)``."""
    s = _as_scores(scores)
    gold.check(s.shape[0])
    l1, l2 = _boundary_losses(s.shape[0], gold, cfg.tau_frames)
    a1, a2 = s[:, 0] + l1, s[:, 1] + l2
    _, _, best = _best_pair(a1, a2)
    # gold's loss terms are exactly zero, so this matches the maximised expression bit for bit
    at_gold = a1[gold.y1 - 1] + a2[gold.y2 - 1]
    return float(best - at_gold)


def vot_from_segmentation(seg: Segmentation, vot_type: str, frame_period_ms: float = 1.0, type_prob: float = 1.0) -> VotMeasurement:
    """Signed VOT for a decoded pair.

    Positive VOT pairs are (burst, voicing); negative ones are (prevoicing, burst)
    and are reported below zero.
    """
    if vot_type not in VOT_TYPES:
        raise InputContractError(f"unknown VOT type {vot_type!r}")
    magnitude = (seg.y2 - seg.y1) * frame_period_ms
    vot = magnitude if vot_type == "positive" else -magnitude
    return VotMeasurement(vot_ms=float(vot), vot_type=vot_type, boundaries=seg, type_prob=float(type_prob))
