"""Figures written straight to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .maze_world import OccupancyGrid  # noqa: E402

_STYLE = {
    "figure.figsize": (5.0, 3.5),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
}


def set_style(**overrides) -> dict:
    """Apply the house rcParams; returns the dict actually applied."""
    params = {**_STYLE, **overrides}
    matplotlib.rcParams.update(params)
    return params


def plot_success_curves(plot: dict, path) -> Path:
    """Render a ``{"title", "series": [{label, x, y, yerr}]}`` description to an image."""
    set_style()
    fig, ax = plt.subplots()
    for s in plot["series"]:
        ax.errorbar(s["x"], s["y"], yerr=s.get("yerr"), marker="o", capsize=2, label=s["label"])
    xs = sorted({x for s in plot["series"] for x in s["x"]})
    if xs:
        ax.set_xticks(xs)
    ax.set_xlabel("start-goal distance (steps)")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(plot.get("title", ""))
    if plot["series"]:
        ax.legend(loc="best")
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def _draw_grid(ax, grid: OccupancyGrid):
    ax.imshow(grid.cells, cmap="Greys", vmin=0, vmax=1.6, origin="upper", interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_graph(graph, grid: OccupancyGrid, path) -> Path:
    """Both-way edges as blue lines, one-way edges as red arrows."""
    set_style(**{"figure.figsize": (5.0, 5.0)})
    fig, ax = plt.subplots()
    _draw_grid(ax, grid)
    both, oneway = graph.pair_kinds()
    for (i, j) in both:
        ax.plot([i.x, j.x], [i.y, j.y], color="tab:blue", lw=1.0)
    for (i, j) in oneway:
        ax.annotate("", xy=(j.x, j.y), xytext=(i.x, i.y), arrowprops={"arrowstyle": "->", "color": "tab:red", "lw": 1.2})
    ax.set_title(f"{len(both)} both-way pairs, {len(oneway)} one-way")
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_episode(grid: OccupancyGrid, trajectory, path, start=None, goal=None, deleted=()) -> Path:
    set_style(**{"figure.figsize": (5.0, 5.0)})
    fig, ax = plt.subplots()
    _draw_grid(ax, grid)
    if trajectory:
        xy = np.array([(c[0], c[1]) for c in trajectory], dtype=float)
        ax.plot(xy[:, 0], xy[:, 1], color="tab:orange", lw=1.2, alpha=0.8)
    for (i, j) in deleted:
        ax.plot([i[0], j[0]], [i[1], j[1]], color="tab:red", lw=2.0, ls=":")
    if start is not None:
        ax.plot(start[0], start[1], "o", color="tab:green", label="start")
    if goal is not None:
        ax.plot(goal[0], goal[1], "*", color="tab:purple", ms=10, label="goal")
    if start is not None or goal is not None:
        ax.legend(loc="upper right")
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_observation(obs: np.ndarray, path, features: int = 5) -> Path:
    """Heatmap of a panorama, one row per direction."""
    set_style(**{"figure.figsize": (3.0, 4.0)})
    fig, ax = plt.subplots()
    im = ax.imshow(np.asarray(obs).reshape(-1, features), cmap="viridis", vmin=0, vmax=1)
    ax.set_yticks(range(8), ["N", "NE", "E", "SE", "S", "SW", "W", "NW"])
    ax.set_xticks(range(features), ["dist"] + [f"c{i}" for i in range(features - 1)])
    fig.colorbar(im, ax=ax, shrink=0.8)
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
