"""Report figures. Everything renders off-screen straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STRATUM_STYLE = {"all": "-", "positive": "--", "negative": ":"}


def _finish(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def tolerance_curves(tables, path, title=None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, tab in enumerate(tables):
        color = f"C{k}"
        for s, style in STRATUM_STYLE.items():
            ys = [tab.strata[s][t] for t in tab.taus]
            if all(np.isnan(ys)):
                continue
            ax.plot(tab.taus, np.array(ys) * 100, style, marker="o", color=color, label=f"{tab.label} / {s} (N={tab.counts[s]})")
    ax.set_xlabel("tolerance (ms)")
    ax.set_ylabel("within tolerance (%)")
    ax.set_ylim(0, 102)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower right")
    if title:
        ax.set_title(title)
    _finish(fig, path)


def vot_scatter(predictions, golds, path):
    ids = sorted(golds)
    g = np.array([golds[i].vot_ms for i in ids])
    p = np.array([predictions[i].vot_ms for i in ids])
    wrong = np.array([predictions[i].vot_type != golds[i].vot_type for i in ids])
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    lo, hi = min(g.min(), p.min()) - 5, max(g.max(), p.max()) + 5
    ax.plot([lo, hi], [lo, hi], color="0.6", lw=1)
    ax.scatter(g[~wrong], p[~wrong], s=8, alpha=0.6, label="type correct")
    if wrong.any():
        ax.scatter(g[wrong], p[wrong], s=14, marker="x", color="C3", label="type wrong")
    ax.set_xlabel("manual VOT (ms)")
    ax.set_ylabel("predicted VOT (ms)")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.legend(fontsize=7)
    _finish(fig, path)


def training_curves(history, path):
    epochs = [r["epoch"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("struct", "tagger", "adversary", "total"):
        ax1.plot(epochs, [r[key] for r in history], marker=".", label=key)
    ax1.set_yscale("symlog", linthresh=1e-2)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean training loss")
    ax1.legend(fontsize=7)
    for tau in history[0]["val_proportion"]:
        ax2.plot(epochs, [100 * r["val_proportion"][tau] for r in history], marker=".", label=f"tau<={tau}ms")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation within tolerance (%)")
    ax2.legend(fontsize=7)
    _finish(fig, path)


def crossval_bars(folds, path, tau=2):
    names = [f["left_out"] for f in folds]
    key = str(tau)
    within = [100 * f["within"]["proportions"]["all"][key] for f in folds]
    unseen = [100 * f["unseen"]["proportions"]["all"][key] for f in folds]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, within, 0.4, label="within-corpus")
    ax.bar(x + 0.2, unseen, 0.4, label="unseen corpus")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_xlabel("left-out corpus")
    ax.set_ylabel(f"within {tau} ms (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=7)
    _finish(fig, path)
