"""Figure rendering for the command-line report paths.

Every renderer writes a PNG next to the delimited output it illustrates
and returns the path it wrote (or ``None`` when the data shape has no
sensible figure, e.g. a slice with more than two free axes).  The Agg
backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 130


def render_schedule(path, horizons, estimates):
    """Horizon-schedule means with 95% CI bars on a log-time axis."""
    horizons = np.asarray(horizons, dtype=float)
    means = np.array([e.mean for e in estimates])
    half = np.array([1.96 * e.stderr for e in estimates])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(horizons, means, yerr=half, fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("estimate")
    ax.set_title("estimate vs horizon (95% CI)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_slice(path, free_names, coords, columns):
    """Exported slice as a line plot (one free axis) or heatmap (two).

    ``coords`` is (P, k) for k free axes; ``columns`` maps column name to
    a length-P array.  With two free axes the first column is drawn as a
    heatmap (the lattice is the product of the sorted unique coordinates).
    """
    coords = np.asarray(coords, dtype=float)
    k = coords.shape[1] if coords.ndim == 2 else 0
    if k == 0 or k > 2 or not columns:
        return None
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if k == 1:
        x = coords[:, 0]
        order = np.argsort(x)
        for name, vals in columns.items():
            ax.plot(x[order], np.asarray(vals)[order], label=name)
        ax.set_xlabel(free_names[0])
        if len(columns) > 1:
            ax.legend()
        else:
            ax.set_ylabel(next(iter(columns)))
    else:
        name, vals = next(iter(columns.items()))
        xu = np.unique(coords[:, 0])
        yu = np.unique(coords[:, 1])
        field = np.full((xu.size, yu.size), np.nan)
        ix = np.searchsorted(xu, coords[:, 0])
        iy = np.searchsorted(yu, coords[:, 1])
        field[ix, iy] = np.asarray(vals, dtype=float)
        integral = np.allclose(field, np.round(field))
        cmap = plt.get_cmap("tab10" if integral else "viridis")
        mesh = ax.pcolormesh(xu, yu, field.T, cmap=cmap, shading="nearest")
        fig.colorbar(mesh, ax=ax, label=name)
        ax.set_xlabel(free_names[0])
        ax.set_ylabel(free_names[1])
        ax.set_xscale("symlog", linthresh=1.0)
        ax.set_yscale("symlog", linthresh=1.0)
    ax.set_title(", ".join(columns))
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_margins(path, reports):
    """Signed check margins as horizontal bars, green for pass, red for fail."""
    if not reports:
        return None
    names = [r.name for r in reports]
    margins = np.array([r.margin for r in reports], dtype=float)
    finite = np.where(np.isfinite(margins), margins, 0.0)
    colors = ["#2a9d48" if r.passed else "#c3342b" for r in reports]
    fig, ax = plt.subplots(figsize=(6.5, 0.5 * len(names) + 1.5))
    ax.barh(np.arange(len(names)), finite, color=colors)
    ax.set_yticks(np.arange(len(names)), names)
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("worst-case slack (>= 0 passes)")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
