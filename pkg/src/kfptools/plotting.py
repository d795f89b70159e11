"""SVG figures: trajectories and violin/box plots of posterior draws.

Text is rendered as paths so every SVG is self-contained.
"""

from __future__ import annotations

import io
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.fonttype"] = "path"
plt.rcParams["svg.hashsalt"] = "kfptools"  # stable element ids


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def trajectory_svg(traj, title: Optional[str] = None) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, node in enumerate(traj.nodes):
        ax.plot(traj.times, traj.values[:, j], label=node)
    ax.set_xlabel("time")
    ax.set_ylabel("unlabeled proportion")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _to_svg(fig)


def _violin_box(ax, columns: Sequence[np.ndarray], labels: Sequence[str],
                truth: Optional[Sequence[Optional[float]]] = None):
    pos = np.arange(1, len(columns) + 1)
    parts = ax.violinplot(columns, positions=pos, showextrema=False, widths=0.8)
    for body in parts["bodies"]:
        body.set_alpha(0.4)
    ax.boxplot(columns, positions=pos, widths=0.15, showfliers=False)
    if truth is not None:
        for x, t in zip(pos, truth):
            if t is not None:
                ax.plot([x - 0.4, x + 0.4], [t, t], color="crimson", lw=1.2)
    ax.set_xticks(pos)
    ax.set_xticklabels(labels)


def posterior_svg(result, names: Optional[Sequence[str]] = None,
                  truth: Optional[dict] = None, title: Optional[str] = None) -> str:
    """One violin/box per parameter; red bars mark known true values."""
    names = list(names or result.names)
    cols = [result.draws(n) for n in names]
    fig, ax = plt.subplots(figsize=(1.2 * len(names) + 2, 4))
    _violin_box(ax, cols, names, None if truth is None else [truth.get(n) for n in names])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _to_svg(fig)


def grid_svg(cells: dict, names: Sequence[str], noise_levels: Sequence[float],
             timepoints: Sequence[int], truth: Optional[dict] = None,
             title: Optional[str] = None) -> str:
    """Rows are noise levels, columns are time-point counts; ``cells[(noise, n)]`` is a result."""
    fig, axes = plt.subplots(len(noise_levels), len(timepoints),
                             figsize=(3.2 * len(timepoints), 2.8 * len(noise_levels)),
                             sharey=True, squeeze=False)
    for r, noise in enumerate(noise_levels):
        for c, n in enumerate(timepoints):
            ax = axes[r][c]
            res = cells.get((noise, n))
            if res is None:
                ax.set_axis_off()
                continue
            _violin_box(ax, [res.draws(p) for p in names], list(names),
                        None if truth is None else [truth.get(p) for p in names])
            ax.set_title(f"{n} points, {noise:.1%} noise", fontsize=9)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _to_svg(fig)
