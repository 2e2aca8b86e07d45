"""Render sweep and study artifacts to PNG files next to the plot data.

Uses the Agg backend only; rendering identical artifacts twice yields
byte-identical files (PNG output carries no timestamps).
"""

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

import numpy as np

from .experiments import StudyArtifact, SweepArtifact

__all__ = ["render_sweep", "render_study", "render_artifact"]

_DPI = 150


def render_sweep(artifact: SweepArtifact, out_dir) -> List[Path]:
    """Mean reference-distance curve with min/max band per sweep value."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for value, curve in zip(artifact.values, artifact.curves):
        k = np.asarray(curve["k"], dtype=float)
        if k.size == 0:
            continue
        line, = ax.plot(k, curve["mean"], label=f"{artifact.axis} = {value:g}")
        ax.fill_between(k, curve["lo"], curve["hi"],
                        color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("relative distance to reference")
    ax.set_title(f"Convergence across {artifact.axis} values "
                 f"({artifact.replications} replications)")
    if any(curve["k"] for curve in artifact.curves):
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    path = out / f"sweep_{artifact.axis}.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return [path]


def _rows_by_series(rows, value_col: int):
    series = {}
    for row in rows:
        series.setdefault(row[value_col], []).append(row)
    return dict(sorted(series.items()))


def render_study(artifact: StudyArtifact, out_dir) -> List[Path]:
    """Profit-ratio and demand-satisfaction panels against theta."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for firm, rows in _rows_by_series(artifact.profit, 1).items():
        rows = sorted(rows)
        thetas = [r[0] for r in rows]
        ax.errorbar(thetas, [r[2] for r in rows], yerr=[r[3] for r in rows],
                    marker="o", capsize=3, label=f"firm {int(firm)}")
    ax.set_xlabel("substitutability theta")
    ax.set_ylabel("realized / expected profit ratio")
    ax.set_title("Per-firm profit ratio at equilibrium")
    if artifact.profit:
        ax.legend()
    ax.grid(True, alpha=0.3)
    path = out / "profit_ratio.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    area_means = {}
    for area, rows in _rows_by_series(artifact.satisfaction, 1).items():
        rows = sorted(rows)
        thetas = [r[0] for r in rows]
        ax.plot(thetas, [r[2] for r in rows], color="gray", alpha=0.45,
                linewidth=0.9)
        for theta, _, mean, _ in rows:
            area_means.setdefault(theta, []).append(mean)
    if area_means:
        thetas = sorted(area_means)
        ax.plot(thetas, [float(np.mean(area_means[t])) for t in thetas],
                color="C0", marker="o", linewidth=2.2, label="area average")
        ax.legend()
    ax.set_xlabel("substitutability theta")
    ax.set_ylabel("demand satisfaction")
    ax.set_title("Per-area demand satisfaction (gray) and average")
    ax.grid(True, alpha=0.3)
    path = out / "satisfaction.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)
    return written


def render_artifact(artifact, out_dir) -> List[Path]:
    """Dispatch on artifact kind; returns the written figure paths."""
    if isinstance(artifact, SweepArtifact):
        return render_sweep(artifact, out_dir)
    if isinstance(artifact, StudyArtifact):
        return render_study(artifact, out_dir)
    raise TypeError(f"cannot render {type(artifact).__name__}")
