"""Minimal SVG line plots with the run configuration embedded as metadata."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "", config=None, markers: bool = False):
    """Write ``series`` (label -> y values) against ``x`` to an SVG file."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, marker="o" if markers else None, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    meta = {"Creator": "holocrit", "Title": title or ylabel}
    if config is not None:
        meta["Description"] = json.dumps(config, sort_keys=True)
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
