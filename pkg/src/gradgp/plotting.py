"""Static figures for the experiment runner.

Figures are written as SVG through the Agg backend with a fixed hash salt and
no date stamp, so reruns produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "gradgp",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.4),
    "lines.linewidth": 1.4,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def convergence_plot(curves: dict, path, ylabel: str = "relative gradient norm",
                     tol: float | None = None) -> None:
    """Log-scale curves ``{label: values}`` against iteration number."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for label, values in curves.items():
            values = np.asarray(values, dtype=float)
            ax.semilogy(np.arange(values.size), values, label=label)
        if tol is not None:
            ax.axhline(tol, color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        _save(fig, path)


def heatmap_plot(xs, ys, values, path, title: str = "", mark=None) -> None:
    """Filled contours of ``values[j, i]`` over the grid ``xs x ys``."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.4))
        cs = ax.contourf(xs, ys, values, levels=20, cmap="viridis")
        fig.colorbar(cs, ax=ax)
        if mark is not None:
            ax.plot(*mark, "w+", ms=10, mew=1.5)
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        _save(fig, path)


def scatter_plot(panels: dict, path) -> None:
    """One panel per ``{title: (x, y)}`` sample set."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2),
                                 sharex=True, sharey=True, squeeze=False)
        for ax, (title, (x, y)) in zip(axes[0], panels.items()):
            ax.plot(x, y, ".", ms=1.5, alpha=0.5)
            ax.set_title(title)
            ax.set_xlabel("$x_1$")
        axes[0, 0].set_ylabel("$x_2$")
        _save(fig, path)


def scaling_plot(dims, times, path) -> None:
    """Log-log wall time against dimension with a linear reference slope."""
    dims = np.asarray(dims, dtype=float)
    times = np.asarray(times, dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.loglog(dims, times, "o-", label="measured")
        ax.loglog(dims, times[0] * dims / dims[0], "--", color="0.6", label="linear")
        ax.set_xlabel("dimension D")
        ax.set_ylabel("wall time [s]")
        ax.legend(frameon=False)
        _save(fig, path)
