"""Figures written next to the CSV reports.

Uses the object-oriented matplotlib API with the Agg canvas, so nothing here
depends on a display or on pyplot state.
"""

from __future__ import annotations

import functools

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(RC):
            return fn(*args, **kwargs)

    return wrapper


def _figure(width=4.5, height=3.0):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


@_styled
def plot_schedule(schedule, path):
    n = np.arange(1, schedule.N + 1)
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot(n, schedule.beta[1:], label=r"$\beta_n$")
    ax.plot(n, schedule.alpha_bar[1:], label=r"$\bar\alpha_n$")
    ax.set_xlabel("step n")
    ax.legend(frameon=False)
    return _save(fig, path)


@_styled
def plot_diffusion_stats(rows, path):
    """rows: iterable of (n, mean, variance, min, max)."""
    arr = np.asarray(rows, dtype=float)
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot(arr[:, 0], arr[:, 1], label="mean")
    ax.plot(arr[:, 0], arr[:, 2], label="variance")
    ax.fill_between(arr[:, 0], arr[:, 3], arr[:, 4], alpha=0.2, label="min/max")
    ax.set_xlabel("step n")
    ax.legend(frameon=False)
    return _save(fig, path)


@_styled
def plot_loss(log, path):
    steps = [r.step for r in log]
    fig = _figure()
    ax = fig.add_subplot()
    ax.semilogy(steps, [max(r.loss, 1e-300) for r in log], ".", ms=2, alpha=0.4, label="loss")
    ax.semilogy(steps, [r.running_mean for r in log], label="running mean")
    ax.set_xlabel("SGD step")
    ax.legend(frameon=False)
    return _save(fig, path)


@_styled
def plot_snapshots(snapshots, rows, cols, path, max_panels=10):
    """Grey-level strip of (n, field) snapshots, first channel only."""
    if not snapshots:
        return None
    pick = snapshots
    if len(pick) > max_panels:
        idx = np.linspace(0, len(pick) - 1, max_panels).round().astype(int)
        pick = [pick[i] for i in idx]
    fig = _figure(width=1.2 * len(pick), height=1.5)
    for k, (n, u) in enumerate(pick):
        ax = fig.add_subplot(1, len(pick), k + 1)
        ax.imshow(np.atleast_2d(u)[0].reshape(rows, cols), cmap="gray", vmin=-1, vmax=1, interpolation="nearest")
        ax.set_title(f"n={n}", fontsize=7)
        ax.set_axis_off()
    return _save(fig, path)


@_styled
def plot_greens(report, path):
    s = np.arange(1, len(report.probe_values) + 1)
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot(s, report.probe_values, "o-", ms=3, label="discrete probe")
    if np.isfinite(report.target_step):
        ax.axvline(report.target_step, ls="--", color="k", lw=0.8, label="analytic peak")
    ax.set_xlabel("step")
    ax.set_ylabel("probe value")
    ax.legend(frameon=False)
    return _save(fig, path)
