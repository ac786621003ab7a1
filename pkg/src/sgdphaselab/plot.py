"""SVG rendering of loss curves and stability heatmaps.

Output bytes are fixed for fixed input: the SVG id salt is pinned and the
date metadata is dropped.
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import PlotError  # noqa: E402

SVG_RC = {"svg.hashsalt": "sgdphaselab", "svg.fonttype": "path", "path.simplify": False}


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


@dataclass
class Guide:
    """Reference power law t^slope drawn through an anchor point."""

    label: str
    slope: float
    anchor: Optional[tuple] = None


@dataclass
class Heatmap:
    x: Sequence[float]
    y: Sequence[float]
    values: np.ndarray  # shape (len(y), len(x))
    boundary_x: Sequence[float] = ()
    boundary_y: Sequence[float] = ()
    xlabel: str = "alpha"
    ylabel: str = "beta"
    colorbar: str = "log10 final loss"


@dataclass
class PlotSpec:
    title: str = ""
    series: List[Series] = field(default_factory=list)
    guides: List[Guide] = field(default_factory=list)
    marks: Dict[str, float] = field(default_factory=dict)
    heatmap: Optional[Heatmap] = None
    xlabel: str = "t"
    ylabel: str = "loss"
    loglog: bool = True


def _save(fig, path: pathlib.Path) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _line_chart(spec: PlotSpec, path: pathlib.Path) -> pathlib.Path:
    cleaned = []
    for s in spec.series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if spec.loglog and np.any((x[keep] <= 0) | (y[keep] <= 0)):
            raise PlotError(f"series {s.label!r} has non-positive values on a log axis")
        cleaned.append((s.label, x[keep], y[keep]))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, x, y in cleaned:
        ax.plot(x, y, label=label, linewidth=1.4)
    first = next(((x, y) for _, x, y in cleaned if x.size), None)
    for guide in spec.guides:
        if first is None:
            break
        x0, y0 = guide.anchor if guide.anchor is not None else (first[0][0], first[1][0])
        xs = np.array([first[0][0], first[0][-1]])
        ax.plot(xs, y0 * (xs / x0) ** guide.slope, linestyle="--", color="0.4", linewidth=0.9,
                label=guide.label)
    for name, t in spec.marks.items():
        if np.isfinite(t) and t > 0:
            ax.axvline(t, linestyle=":", color="0.2", linewidth=0.9)
            ax.annotate(name, (t, 0.97), xycoords=("data", "axes fraction"), fontsize=8,
                        rotation=90, va="top", ha="right")
    if spec.loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def _heatmap(spec: PlotSpec, path: pathlib.Path) -> pathlib.Path:
    hm = spec.heatmap
    values = np.asarray(hm.values, dtype=float)
    if values.shape != (len(hm.y), len(hm.x)):
        raise PlotError(f"heatmap values have shape {values.shape}, expected {(len(hm.y), len(hm.x))}")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    masked = np.ma.masked_invalid(values)
    mesh = ax.pcolormesh(np.asarray(hm.x), np.asarray(hm.y), masked, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=hm.colorbar)
    if len(hm.boundary_x):
        ax.plot(hm.boundary_x, hm.boundary_y, color="black", linewidth=1.5, label="predicted boundary")
        ax.legend(fontsize=8, loc="lower left")
    ax.set_xlabel(hm.xlabel)
    ax.set_ylabel(hm.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return _save(fig, path)


def emit_plot(spec: PlotSpec, path: str | pathlib.Path) -> pathlib.Path:
    """Render a log-log line chart or, when ``spec.heatmap`` is set, a heatmap."""
    path = pathlib.Path(path)
    if spec.heatmap is None and not spec.series:
        raise PlotError("nothing to plot: no series and no heatmap")
    with matplotlib.rc_context(SVG_RC):
        if spec.heatmap is not None:
            return _heatmap(spec, path)
        return _line_chart(spec, path)
