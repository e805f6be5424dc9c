"""Self-contained SVG plots for check artifacts.

Output is deterministic: matplotlib's hash salt and the SVG date field
are pinned so identical inputs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "catou"

import matplotlib.pyplot as plt  # noqa: E402


def emit_plot(series, path, title: str = "", xlabel: str = "",
              ylabel: str = "", loglog: bool = False,
              annotation: str | None = None) -> None:
    """Write a line/marker plot of (x, y, label) triples to an SVG file.

    ``series`` is a nonempty iterable of (x, y, label) with equal-length
    x and y; labels may be None. Single points render as markers.
    """
    series = list(series)
    if not series:
        raise ValueError("emit_plot needs at least one series")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for x, y, label in series:
        if len(x) != len(y):
            raise ValueError("series x and y must have equal length")
        if len(x) == 0:
            raise ValueError("series must be nonempty")
        style = "o-" if len(x) > 1 else "o"
        ax.plot(x, y, style, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if any(label for _, _, label in series):
        ax.legend()
    if annotation:
        ax.text(0.02, 0.98, annotation, transform=ax.transAxes,
                va="top", ha="left", fontsize=9)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
