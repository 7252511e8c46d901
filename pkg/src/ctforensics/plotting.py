"""Report figures. Everything renders off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .heatmap import Heatmap, to_overlay_coords  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def training_curves(log_rows, path) -> Path:
    epochs = [r["epoch"] for r in log_rows]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax_loss.plot(epochs, [r["train_loss"] for r in log_rows], marker="o")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("training loss")
    ax_acc.plot(epochs, [r["train_acc"] for r in log_rows], marker="o", label="train")
    ax_acc.plot(epochs, [r["val_acc"] for r in log_rows], marker="s", label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend(loc="lower right")
    return _save(fig, path)


def heatmap_overlay(image, heatmap: Heatmap, path, true_center=None, peak=None, title=None) -> Path:
    """Slice in gray with the heatmap blended on top at frame resolution."""
    s = heatmap.spec
    g = heatmap.size
    lo = s.half - s.stride / 2
    extent = (lo, lo + g * s.stride, lo + g * s.stride, lo)
    fig, ax = plt.subplots(figsize=(4.6, 4.6))
    ax.imshow(image, cmap="gray")
    ax.imshow(np.ma.masked_less(heatmap.grid, 0.05), cmap="inferno", alpha=0.55, vmin=0, vmax=1,
              extent=extent, interpolation="nearest")
    if true_center is not None:
        ax.plot(*true_center, "c+", markersize=14, mew=2, label="true centre")
    if peak is not None:
        ax.plot(*to_overlay_coords(peak, s), "yx", markersize=10, mew=2, label="heatmap peak")
    if true_center is not None or peak is not None:
        ax.legend(loc="lower right", fontsize=7)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def grid_search(report, path) -> Path:
    """Cross-validated accuracy of every grid point, the winner highlighted."""
    labels = [f"{r['kernel']} C={r['C']:g}" + ("" if r["kernel"] == "linear" else f" g={r['gamma_label']}")
              for r in report]
    acc = [r["cv_accuracy"] for r in report]
    colors = ["tab:red" if r["selected"] else "tab:blue" for r in report]
    fig, ax = plt.subplots(figsize=(6, 0.22 * len(report) + 1))
    ax.barh(range(len(report)), acc, color=colors)
    ax.set_yticks(range(len(report)), labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("cross-validated accuracy")
    return _save(fig, path)


def scan_profile(rows, path, verdict=None, tamper_slices=None) -> Path:
    """Per-slice decision value along the scan; positives marked."""
    z = np.array([r["slice_index"] for r in rows])
    score = np.array([float(r["score"]) for r in rows])
    fake = np.array([r["label_pred"] == "fake" for r in rows])
    fig, ax = plt.subplots(figsize=(6, 2.6))
    if tamper_slices is not None:
        ax.axvspan(min(tamper_slices) - 0.5, max(tamper_slices) + 0.5, color="tab:orange", alpha=0.2,
                   label="tampered slices")
    ax.axhline(0, color="gray", lw=0.8)
    ax.plot(z, score, color="tab:blue", lw=1)
    ax.scatter(z[fake], score[fake], color="tab:red", zorder=3, s=18, label="flagged fake")
    ax.scatter(z[~fake], score[~fake], color="tab:blue", zorder=3, s=18, label="real")
    ax.set_xlabel("slice")
    ax.set_ylabel("SVM decision value")
    if verdict:
        ax.set_title(f"verdict: {verdict}", fontsize=9)
    ax.legend(fontsize=7, loc="best")
    return _save(fig, path)


def metrics_bars(rows, path) -> Path:
    """Precision, recall and F1 per report row; absent values leave a gap."""
    names = [f"{r['test_set']} {r['unit']}" for r in rows]
    keys = ("precision", "recall", "f1")
    fig, ax = plt.subplots(figsize=(1.6 * len(rows) + 2, 3))
    width = 0.25
    for k, key in enumerate(keys):
        vals = [float(r[key]) if r[key] not in ("-", None) else np.nan for r in rows]
        ax.bar(np.arange(len(rows)) + (k - 1) * width, vals, width, label=key)
    ax.set_xticks(range(len(rows)), names)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, path)
