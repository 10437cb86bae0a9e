"""Report figures written straight to files (no interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .profiler import OPS, ProfileReport

STYLE = {
    "font.size": 9,
    "axes.linewidth": 0.8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "savefig.dpi": 150,
}
COLORS = ["#3498db", "#e74c3c", "#2ecc71", "#9b59b6", "#34495e", "#95a5a6", "#f39c12", "#1abc9c", "#734222", "#A52019"]


def plot_op_breakdown(reports: list[ProfileReport], path: str | Path) -> Path:
    """Stacked horizontal bars of wall-clock fraction per op, one bar per model."""
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(6.4, 1.2 + 0.5 * len(reports)))
        ax = fig.add_subplot()
        names = [r.name for r in reports]
        left = np.zeros(len(reports))
        for op, color in zip(OPS, COLORS):
            vals = np.array([100 * r.breakdown.get(op, 0.0) for r in reports])
            ax.barh(names, vals, left=left, color=color, label=op, height=0.6)
            left += vals
        ax.set_xlim(0, 100)
        ax.set_xlabel("share of forward wall-clock (%)")
        ax.invert_yaxis()
        ax.legend(ncol=5, fontsize=7, loc="upper center", bbox_to_anchor=(0.5, -0.35 - 0.05 * len(reports)), frameon=False)
        fig.tight_layout()
        fig.savefig(path, bbox_inches="tight")
    return Path(path)


def plot_cost_comparison(reports: list[ProfileReport], path: str | Path) -> Path:
    """FLOPs, parameters and shift traffic side by side."""
    panels = [
        ("FLOPs (G)", [r.flops / 1e9 for r in reports]),
        ("parameters (M)", [r.params / 1e6 for r in reports]),
        ("shift traffic (M elements)", [r.shift_elements / 1e6 for r in reports]),
    ]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(8.0, 3.0))
        x = np.arange(len(reports))
        for i, (label, vals) in enumerate(panels):
            ax = fig.add_subplot(1, 3, i + 1)
            ax.bar(x, vals, color=COLORS[: len(reports)])
            ax.set_xticks(x, [r.name for r in reports], rotation=30, ha="right", fontsize=7)
            ax.set_title(label, fontsize=9)
        fig.tight_layout()
        fig.savefig(path)
    return Path(path)


def render_figures(reports: list[ProfileReport], outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [plot_cost_comparison(reports, outdir / "cost_comparison.png")]
    if any(r.breakdown for r in reports):
        paths.append(plot_op_breakdown(reports, outdir / "op_breakdown.png"))
    return paths
