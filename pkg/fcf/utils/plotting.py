import io
from typing import Sequence

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fcf"
import matplotlib.pyplot as plt
import numpy as np

from fcf.services.evaluation import CALTECH_MR, EvalCurve
from fcf.services.filterbank import FilterBank

SVG_METADATA = {"Date": None}


def _to_svg(fig) -> bytes:
    buf = io.BytesIO()
    plt.savefig(buf, format="svg", bbox_inches="tight", metadata=SVG_METADATA)
    buf.seek(0)
    plt.close(fig)
    return buf.getvalue()


def create_curve_svg(curve: EvalCurve) -> bytes:
    """Miss rate over FPPI on a log axis, or precision over recall, as SVG bytes."""
    fig, ax = plt.subplots(figsize=(6, 5))

    xs = [p[0] for p in curve.points]
    ys = [p[1] for p in curve.points]

    if curve.protocol == CALTECH_MR:
        label = f"{curve.summary * 100:.2f}% MR"
        ax.step(xs, ys, where="post", color="#2196F3", label=label, linewidth=2)
        ax.set_xscale("log", nonpositive="clip")
        ax.set_yscale("log", nonpositive="clip")
        ax.set_xlim(1e-3, 1e1)
        ax.set_ylim(0.05, 1.0)
        ax.set_xlabel("false positives per image", fontsize=10)
        ax.set_ylabel("miss rate", fontsize=10)
        ax.set_title("Miss rate vs. FPPI", fontsize=12, fontweight="bold")
    else:
        label = f"{curve.summary * 100:.2f}% AP"
        ax.plot(xs, ys, "-", color="#FF5722", label=label, linewidth=2)
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("recall", fontsize=10)
        ax.set_ylabel("precision", fontsize=10)
        ax.set_title("Precision vs. recall", fontsize=12, fontweight="bold")

    ax.legend(loc="lower left")
    ax.grid(True, alpha=0.3, which="both")

    plt.tight_layout()
    return _to_svg(fig)


def create_heatmap_svg(grid: np.ndarray, title: str) -> bytes:
    """Single-channel influence map."""
    fig, ax = plt.subplots(figsize=(3, 5))
    image = ax.imshow(grid, cmap="viridis", interpolation="nearest")
    fig.colorbar(image, ax=ax, fraction=0.08)
    ax.set_title(title, fontsize=10)
    ax.set_xticks([])
    ax.set_yticks([])
    plt.tight_layout()
    return _to_svg(fig)


def create_channel_maps_svg(maps: np.ndarray, titles: Sequence[str]) -> bytes:
    """Per-channel influence maps side by side, sharing one colour scale."""
    fig, axes = plt.subplots(1, len(maps), figsize=(1.6 * len(maps), 3.6))
    axes = np.atleast_1d(axes)
    vmax = max(float(maps.max()), 1.0)
    for ax, plane, title in zip(axes, maps, titles):
        ax.imshow(plane, cmap="viridis", vmin=0, vmax=vmax, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    plt.tight_layout()
    return _to_svg(fig)


def create_bank_preview_svg(bank: FilterBank, columns: int = 10) -> bytes:
    """Every filter of a bank on a grid; +1 white, -1 black, 0 grey for integer banks."""
    n = len(bank)
    cols = min(columns, n)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(1.1 * cols, 1.3 * rows), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k >= n:
            continue
        f = bank.filters[k]
        limit = max(float(np.abs(f.weights).max()), 1e-12)
        ax.imshow(f.weights, cmap="gray", vmin=-limit, vmax=limit, interpolation="nearest")
        ax.set_title(f.id, fontsize=6)
    plt.tight_layout()
    return _to_svg(fig)
