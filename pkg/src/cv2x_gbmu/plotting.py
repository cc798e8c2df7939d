"""Figure rendering for the report command.

All figures go through the Agg backend and are saved without a software
tag, so identical inputs give identical PNG bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_surface(d: np.ndarray, l: np.ndarray, p: np.ndarray, nsv: int, path: Path) -> Path:
    """Filled contour of predicted success probability over (d, l)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        cs = ax.contourf(d, l, p, levels=np.linspace(0, 1, 11), cmap="viridis")
        fig.colorbar(cs, ax=ax, label="predicted success probability")
        ax.set_xlabel("signal distance d (m)")
        ax.set_ylabel("main interferer distance l (m)")
        ax.set_title(f"two-distance model, NSV = {nsv}")
        return _save(fig, path)


def plot_convergence(traces: Mapping[str, Sequence[float]], path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.5))
        for name, gain in traces.items():
            ax.plot(np.arange(len(gain)), gain, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("normalised utility gain")
        if len(traces) > 1:
            ax.legend()
        return _save(fig, path)


def plot_histograms(columns: Mapping[str, np.ndarray], path: Path, bins: int = 20) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, max(len(columns), 1), figsize=(4.5 * max(len(columns), 1), 3.5), squeeze=False)
        for ax, (name, values) in zip(axes[0], columns.items()):
            v = np.asarray(values, dtype=float)
            v = v[np.isfinite(v)]
            ax.hist(v, bins=bins, color="tab:blue", edgecolor="white")
            ax.axvline(0.0, color="k", lw=0.8)
            ax.set_xlabel(name)
            ax.set_ylabel("realizations")
        return _save(fig, path)


def plot_trajectory(
    positions: np.ndarray,
    receivers: Sequence[tuple[float, float]],
    interferers: Sequence[tuple[float, float]],
    path: Path,
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(positions[:, 0], positions[:, 1], "-", color="tab:orange", label="transmitter path")
        ax.plot(*positions[0], "o", color="tab:orange", mfc="white", label="start")
        ax.plot(*positions[-1], "*", color="tab:orange", ms=12, label="final")
        if len(receivers):
            r = np.asarray(receivers)
            ax.plot(r[:, 0], r[:, 1], "s", color="tab:green", label="receivers")
        if len(interferers):
            q = np.asarray(interferers)
            ax.plot(q[:, 0], q[:, 1], "x", color="tab:red", label="main interferers")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.legend(loc="best")
        return _save(fig, path)
