"""Matplotlib figures rendered alongside the delimited reports.

Every function writes a PNG next to the CSV/JSON artifact it illustrates
and returns the path.  The Agg backend keeps rendering headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_history(history, path):
    """Training vs validation loss per epoch (overfitting check)."""
    history = np.asarray(history, dtype=float)
    epochs = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, history[:, 0], label="training loss")
    ax.plot(epochs, history[:, 1], label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (scaled units)")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("Training vs validation loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(rows, path, threshold: float | None = None):
    """RMSE per hidden-layer combination; rows of (h1, h2, rmse)."""
    labels = [f"{int(h1)}x{int(h2)}" for h1, h2, _ in rows]
    values = [r for _, _, r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, color="steelblue")
    if threshold is not None:
        ax.axhline(threshold, color="firebrick", linestyle="--",
                   label=f"threshold {threshold:g} mg/dL")
        ax.legend()
    ax.set_xlabel("hidden layer sizes")
    ax.set_ylabel("test RMSE (mg/dL)")
    ax.set_title("Hidden-size ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trace(trace, path, max_hours: float | None = 48.0):
    """BG with insulin/meal events for one simulated patient."""
    t_h = np.asarray(trace.t, dtype=float) / 60.0
    sel = slice(None) if max_hours is None else t_h <= max_hours
    fig, axes = plt.subplots(3, 1, figsize=(8, 6), sharex=True)
    axes[0].plot(t_h[sel], np.asarray(trace.bg)[sel], color="black")
    axes[0].axhspan(70, 180, color="green", alpha=0.12, label="target range")
    axes[0].set_ylabel("BG (mg/dL)")
    axes[0].legend(loc="upper right")
    axes[1].step(t_h[sel], np.asarray(trace.insulin)[sel], where="post",
                 color="steelblue")
    axes[1].set_ylabel("insulin (U/5 min)")
    axes[2].step(t_h[sel], np.asarray(trace.meal)[sel], where="post",
                 color="darkorange")
    axes[2].set_ylabel("meal (g/5 min)")
    axes[2].set_xlabel("time (h)")
    fig.suptitle(f"{trace.patient_id} ({trace.group})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_glycemic_fractions(fractions, path):
    """Class balance bar chart for the audit report."""
    labels = ["hypo (<70)", "in range", "hyper (>180)"]
    values = [fractions.hypo, fractions.in_range, fractions.hyper]
    fig, ax = plt.subplots(figsize=(5, 4))
    bars = ax.bar(labels, values, color=["firebrick", "seagreen", "darkorange"])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height(),
                f"{100 * v:.2f}%", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("fraction of BG samples")
    ax.set_yscale("log")
    ax.set_title("Glycemic class balance")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
