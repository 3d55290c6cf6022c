"""Figure rendering for the experiment runner.

Kept separate from the CSV emitters so headless runs can skip matplotlib
entirely (--no-plots). All figures are written as PNG files next to the
delimited output.
"""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_error_traces(path, times, series: dict):
    """Error magnitude against time, one line per series."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, values in series.items():
        ax.plot(times, values, label=name, linewidth=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("error")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep(path, alphas, curves: dict):
    """Steady-state error against measurement noise level, log-log."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, values in curves.items():
        ax.loglog(alphas, values, marker="o", label=name, linewidth=1.0)
    ax.set_xlabel("measurement noise level")
    ax.set_ylabel("steady-state error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_field_triptych(path, grid_n: int, truth, measured, estimate, when: float):
    """Truth, aggregate measurement, and one node's estimate as heatmaps."""
    plt = _pyplot()
    fields = [("true state", truth), ("aggregate measurement", measured),
              ("single-node estimate", estimate)]
    pooled = np.concatenate([np.asarray(f, dtype=float).ravel() for _, f in fields])
    vmin, vmax = float(np.nanmin(pooled)), float(np.nanmax(pooled))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    for ax, (name, field) in zip(axes, fields):
        img = np.asarray(field).reshape((grid_n, grid_n), order="F")
        im = ax.imshow(img, origin="lower", vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_title(f"{name} at t={when:g}s", fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, shrink=0.85)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_disagreement(path, steps, values):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, values, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("max pairwise estimate distance")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
