"""Tolerance-proportion metrics and prediction records.

A prediction agrees with the manual measurement at tolerance ``tau`` when the
signed VOT values differ by at most ``tau`` ms. Getting the sign wrong therefore
costs the full distance between the two values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ParseError, StorageError
from .segmentation import Segmentation

DEFAULT_TAUS = (2, 5, 10, 15)
STRATA = ("all", "positive", "negative")


@dataclass(frozen=True)
class PredictionRecord:
    utterance_id: str
    vot_ms: float
    vot_type: str
    y1: int
    y2: int
    type_prob: float
    model_version: int

    def to_json(self) -> dict:
        return {
            "kind": "prediction",
            "utterance_id": self.utterance_id,
            "vot_ms": self.vot_ms,
            "vot_type": self.vot_type,
            "boundaries": [self.y1, self.y2],
            "type_prob": self.type_prob,
            "model_version": self.model_version,
        }

    @property
    def boundaries(self) -> Segmentation:
        return Segmentation(self.y1, self.y2)


def write_predictions(path, records: Sequence[PredictionRecord], header: dict) -> None:
    lines = [json.dumps({"kind": "header", **header}, sort_keys=True)]
    lines += [json.dumps(r.to_json(), sort_keys=True) for r in records]
    try:
        with open(path, "w") as f:
            f.write("".join(line + "\n" for line in lines))
    except OSError as e:
        raise StorageError(f"cannot write predictions to {path}: {e}") from e


def read_predictions(path) -> dict:
    out = {}
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise StorageError(f"cannot read predictions {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", path, lineno) from None
        if obj.get("kind") == "header":
            continue
        try:
            y1, y2 = obj["boundaries"]
            rec = PredictionRecord(
                obj["utterance_id"], float(obj["vot_ms"]), obj["vot_type"], int(y1), int(y2),
                float(obj["type_prob"]), int(obj["model_version"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed prediction record ({e})", path, lineno) from None
        if rec.utterance_id in out:
            raise ParseError(f"duplicate prediction for {rec.utterance_id}", path, lineno)
        out[rec.utterance_id] = rec
    return out


@dataclass
class ToleranceTable:
    taus: tuple
    strata: dict  # stratum -> {tau: proportion}
    counts: dict  # stratum -> N
    label: str = "all"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "taus": list(self.taus),
            "counts": dict(self.counts),
            "proportions": {s: {str(t): p for t, p in row.items()} for s, row in self.strata.items()},
        }


def _check_ids(predictions: Mapping, golds: Mapping) -> list:
    p, g = set(predictions), set(golds)
    if p != g:
        only_p = sorted(p - g)
        only_g = sorted(g - p)
        raise DataError(
            "prediction/gold ids differ: "
            f"{len(only_p)} only in predictions {only_p[:10]}, {len(only_g)} only in gold {only_g[:10]}"
        )
    return sorted(g)


def _proportions(diffs: np.ndarray, taus) -> dict:
    if diffs.size == 0:
        return {t: float("nan") for t in taus}
    return {t: float(np.count_nonzero(diffs <= t) / diffs.size) for t in taus}


def tolerance_table(predictions: Mapping, golds: Mapping, taus=DEFAULT_TAUS, label: str = "all") -> ToleranceTable:
    """Proportion of |predicted VOT - gold VOT| at or below each tolerance.

    ``predictions`` maps ids to objects with ``vot_ms``; ``golds`` maps ids to
    annotations (``vot_ms`` and ``vot_type``). Strata split by the gold sign.
    """
    ids = _check_ids(predictions, golds)
    taus = tuple(sorted(taus))
    diffs = np.array([abs(predictions[i].vot_ms - golds[i].vot_ms) for i in ids])
    kinds = np.array([golds[i].vot_type for i in ids])
    strata, counts = {}, {}
    for s in STRATA:
        sel = np.ones(len(ids), bool) if s == "all" else kinds == s
        strata[s] = _proportions(diffs[sel], taus)
        counts[s] = int(sel.sum())
    return ToleranceTable(taus, strata, counts, label)


def boundary_offset_table(predictions: Mapping, golds: Mapping, taus=DEFAULT_TAUS, frame_period_ms: float = 1.0) -> dict:
    """Diagnostic only: per-boundary offsets in ms (first and second boundary)."""
    ids = _check_ids(predictions, golds)
    taus = tuple(sorted(taus))
    first, second = [], []
    for i in ids:
        g = golds[i].segmentation(frame_period_ms)
        b = predictions[i].boundaries
        first.append(abs(b.y1 - g.y1) * frame_period_ms)
        second.append(abs(b.y2 - g.y2) * frame_period_ms)
    return {
        "note": "diagnostic: per-boundary offsets, not signed-VOT differences",
        "first_boundary": {str(t): p for t, p in _proportions(np.array(first), taus).items()},
        "second_boundary": {str(t): p for t, p in _proportions(np.array(second), taus).items()},
    }


def classification_accuracy(predictions: Mapping, golds: Mapping) -> float:
    ids = _check_ids(predictions, golds)
    if not ids:
        return float("nan")
    return float(np.mean([predictions[i].vot_type == golds[i].vot_type for i in ids]))


def format_tables(tables: Sequence[ToleranceTable]) -> str:
    """Aligned plain-text rendering, one row per (table, stratum)."""
    taus = tables[0].taus
    head = ["table", "stratum", "N"] + [f"tau<={t:g}ms" for t in taus]
    rows = [head]
    for tab in tables:
        for s in STRATA:
            row = [tab.label, s, str(tab.counts[s])]
            row += ["-" if np.isnan(tab.strata[s][t]) else f"{100 * tab.strata[s][t]:.1f}" for t in taus]
            rows.append(row)
    widths = [max(len(r[k]) for r in rows) for k in range(len(head))]
    lines = ["  ".join(c.ljust(w) if k < 2 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths))) for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def corpus_probe(summaries: np.ndarray, labels: Sequence[str], seed: int = 0, folds: int = 5) -> tuple[float, float]:
    """Cross-validated logistic-regression accuracy at recovering the corpus.

    Returns ``(accuracy, chance)`` where chance is the majority-class rate.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import StratifiedKFold, cross_val_score
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    y = np.asarray(labels)
    _, counts = np.unique(y, return_counts=True)
    chance = float(counts.max() / counts.sum())
    clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    acc = float(np.mean(cross_val_score(clf, np.asarray(summaries), y, cv=cv)))
    return acc, chance
