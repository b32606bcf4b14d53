"""Figure rendering for the report path.

All figures are drawn with the Agg backend and written to files (SVG by
default) next to the delimited outputs; nothing here ever opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import Trajectory
from .verify import ellipse_boundary_points

__all__ = [
    "plot_projection",
    "plot_inputs",
    "plot_trace",
    "plot_state_bounds",
]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_projection(
    path,
    dims: tuple[int, int],
    ellipses: Sequence[tuple[np.ndarray, str]],
    trajectories: Sequence[Trajectory] = (),
    starts: Optional[np.ndarray] = None,
    bounds: Optional[tuple[Optional[float], Optional[float]]] = None,
    labels: tuple[str, str] = ("", ""),
) -> Path:
    """Ellipse outlines, trajectory shadows, and start markers on a plane.

    ``ellipses`` is a list of (2x2 shape matrix, label); ``bounds`` optionally
    draws the safety limits as dashed lines on either axis.
    """
    i, j = dims
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for traj in trajectories:
        ax.plot(traj.states[:, i], traj.states[:, j], color="0.65", lw=0.4, zorder=1)
    for Q2, label in ellipses:
        poly = ellipse_boundary_points(Q2)
        ax.plot(poly[:, 0], poly[:, 1], lw=1.8, label=label, zorder=3)
    if starts is not None and len(starts):
        ax.plot(starts[:, i], starts[:, j], ".", ms=3, color="tab:red",
                label="initial states", zorder=4)
    if bounds is not None:
        for lim, axis in zip(bounds, ("x", "y")):
            if lim is None:
                continue
            for s in (-lim, lim):
                if axis == "x":
                    ax.axvline(s, color="k", ls="--", lw=0.8)
                else:
                    ax.axhline(s, color="k", ls="--", lw=0.8)
    ax.set_xlabel(labels[0] or f"x{i + 1}")
    ax.set_ylabel(labels[1] or f"x{j + 1}")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_inputs(path, trajectories: Sequence[Trajectory], bound: Optional[float] = None) -> Path:
    """All input sequences over time, with the admissible band if given."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    for traj in trajectories:
        ax.plot(np.arange(traj.horizon), traj.inputs[:, 0], color="0.5", lw=0.4)
    if bound is not None:
        ax.axhline(bound, color="k", ls="--", lw=0.8)
        ax.axhline(-bound, color="k", ls="--", lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel("u(k)")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_trace(path, n_grid: Sequence[int], values: np.ndarray,
               reference: Optional[float] = None, ylabel: str = "estimate") -> Path:
    """Identification trace over the data count, with the true value marked."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    ax.plot(n_grid, values, lw=1.0)
    if reference is not None:
        ax.axhline(reference, color="tab:green", ls="--", lw=1.0, label="true value")
        ax.legend(fontsize=8)
    ax.set_xlabel("number of samples N")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_state_bounds(path, trajectories: Sequence[Trajectory], dim: int,
                      bound: float, ylabel: str = "") -> Path:
    """One state coordinate over time against its safety band."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    for traj in trajectories:
        ax.plot(np.arange(traj.states.shape[0]), traj.states[:, dim], color="0.5", lw=0.4)
    ax.axhline(bound, color="k", ls="--", lw=0.8)
    ax.axhline(-bound, color="k", ls="--", lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel(ylabel or f"x{dim + 1}(k)")
    ax.grid(alpha=0.3)
    return _save(fig, path)
