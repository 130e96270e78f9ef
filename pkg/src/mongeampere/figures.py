"""Figure rendering for CLI reports.

Everything goes through the Agg backend and straight to files; figures are
companions to the CSV tables, never the only record of a number.  Callers
skip this module entirely when the run sets figures = off.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_field(path, field, title=""):
    """Render a 1-D profile as a line or a 2-D grid as an image."""
    plt = _plt()
    lat = field.lattice
    vals = np.asarray(field.values, dtype=float)
    fig, ax = plt.subplots(figsize=(5.0, 4.0), layout="constrained")
    if lat.n == 1:
        ax.plot(lat.axes()[0], vals.ravel(), lw=1.2)
        ax.set_xlabel("x")
        ax.grid(True, alpha=0.3)
    elif lat.n == 2:
        xs, ys = lat.axes()
        extent = (xs[0], xs[-1], ys[0], ys[-1])
        im = ax.imshow(
            vals.T, origin="lower", extent=extent, aspect="equal", cmap="viridis"
        )
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        plt.close(fig)
        raise InvalidArgument("field figures support 1-D and 2-D only")
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_loglog(path, xs, ys, xlabel, ylabel, title="", slope_guide=None):
    """Log-log decay/convergence curve, optionally with a reference slope."""
    plt = _plt()
    xs = np.asarray(xs, dtype=float)
    ys = np.maximum(np.asarray(ys, dtype=float), 1e-300)
    fig, ax = plt.subplots(figsize=(5.0, 4.0), layout="constrained")
    ax.loglog(xs, ys, "o-", lw=1.2)
    if slope_guide is not None and len(xs) >= 2 and ys[0] > 0:
        guide = ys[0] * (xs / xs[0]) ** slope_guide
        ax.loglog(xs, guide, "--", color="gray", lw=1.0,
                  label=f"slope {slope_guide:g}")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_gap_bars(path, rows, title=""):
    """Per-direction quotient gaps as a bar chart (symlog magnitude axis)."""
    plt = _plt()
    labels = ["(" + ",".join(str(c) for c in r["k"]) + ")" for r in rows]
    gaps = [r["gap"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.35 * len(rows)), 4.0),
                           layout="constrained")
    ax.bar(range(len(rows)), gaps, color="steelblue")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=60, fontsize=7)
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.set_ylabel("sup quotient - k'Ak/|k|^2")
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
