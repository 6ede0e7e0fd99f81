"""Figures for the benchmark report and training runs (PNG via the Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
MARKERS = {"fbp": "s", "wfdm-only": "^", "whdm-only": "v", "sword": "o"}
# fixed metadata keeps the PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_psnr_curve(records, path):
    """PSNR against kept views, one line per method."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0), layout="constrained")
        for method in MARKERS:
            rows = sorted((r.views, r.report.psnr_db) for r in records if r.method == method)
            if rows:
                v, p = zip(*rows)
                ax.plot(v, p, marker=MARKERS[method], label=method)
        ax.set_xlabel("kept views")
        ax.set_ylabel("PSNR (dB)")
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_gallery(ref, images, path):
    """Reference next to each method's reconstruction, one row per view count.

    ``images`` maps ``(method, views)`` to an :class:`Image`.
    """
    methods = [m for m in MARKERS if any(k[0] == m for k in images)]
    views = sorted({k[1] for k in images})
    lo, hi = float(ref.data.min()), float(ref.data.max())
    extent = [-ref.grid.fov / 2, ref.grid.fov / 2] * 2
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(views), len(methods) + 1, squeeze=False,
                                 figsize=(1.6 * (len(methods) + 1), 1.6 * len(views)),
                                 layout="constrained")
        for i, v in enumerate(views):
            cols = [("reference", ref)] + [(m, images.get((m, v))) for m in methods]
            for j, (title, img) in enumerate(cols):
                ax = axes[i, j]
                ax.set_xticks([])
                ax.set_yticks([])
                if img is None:
                    continue
                ax.imshow(img.data, cmap="gray", vmin=lo, vmax=hi, origin="lower",
                          extent=extent)
                if i == 0:
                    ax.set_title(title, fontsize=8)
            axes[i, 0].set_ylabel(f"{v} views")
        return _save(fig, path)


def plot_loss(trace, path, window: int = 50):
    """Training loss with a running mean."""
    trace = np.asarray(trace, dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0), layout="constrained")
        ax.plot(trace, lw=0.5, alpha=0.4, label="batch")
        if len(trace) >= window:
            smooth = np.convolve(trace, np.ones(window) / window, mode="valid")
            ax.plot(np.arange(window - 1, len(trace)), smooth, label=f"mean of {window}")
        ax.set_xlabel("step")
        ax.set_ylabel("DSM loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_sinograms(panels, path):
    """Side-by-side sinograms; ``panels`` is a list of ``(title, array)``."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), squeeze=False,
                                 figsize=(2.4 * len(panels), 2.6), layout="constrained")
        for ax, (title, data) in zip(axes[0], panels):
            ax.imshow(data, cmap="gray", aspect="auto")
            ax.set_title(title, fontsize=8)
            ax.set_xlabel("detector")
        axes[0, 0].set_ylabel("view")
        return _save(fig, path)
