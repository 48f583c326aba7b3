"""Static top-down renders of labeled point clouds (vector SVG output)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
# reproducible SVG output: fixed element-id salt and embedded timestamp
matplotlib.rcParams["svg.hashsalt"] = "pointlift"
os.environ.setdefault("SOURCE_DATE_EPOCH", "0")

import matplotlib.pyplot as plt
import numpy as np

from .projection import UNLABELED

_PALETTE = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
]


def render_labels(points: np.ndarray, labels: np.ndarray, path: str,
                  class_names: list[str], title: str | None = None) -> None:
    """Orthographic top-down scatter colored by label, with a legend.

    Unlabeled points are drawn in light gray. The output format follows the
    file extension; .svg keeps the render dependency-free to parse.
    """
    pts = np.asarray(points)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(7, 7))
    unl = labels == UNLABELED
    if unl.any():
        ax.scatter(pts[unl, 0], pts[unl, 1], s=2, c="#dddddd", label="unlabeled")
    for c, name in enumerate(class_names):
        sel = labels == c
        if sel.any():
            ax.scatter(pts[sel, 0], pts[sel, 1], s=2,
                       c=_PALETTE[c % len(_PALETTE)], label=name)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", markerscale=4, fontsize=8)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def render_trace(trace_rows: list, path: str) -> None:
    """Loss-curve figure for a training trace (step, l_ip, l_tp, l_tmp)."""
    if not trace_rows:
        return
    arr = np.asarray(trace_rows, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(arr[:, 0], arr[:, 1], label="image-superpoint")
    ax.plot(arr[:, 0], arr[:, 2], label="text-superpoint")
    ax.plot(arr[:, 0], arr[:, 3], label="combined")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
