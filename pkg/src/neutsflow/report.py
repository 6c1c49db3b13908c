"""Matplotlib figure rendering for the report paths (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_training_curves(history, path: str | Path) -> Path:
    """Train loss and validation MSE per epoch."""
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [h.train_loss for h in history], label="train loss")
    ax.plot(epochs, [h.val_mse for h in history], label="val MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_forecast_panels(H, F, preds, path: str | Path, n_panels: int = 3,
                         channel: int = 0) -> Path:
    """History tail, ground truth, and prediction for a few test windows."""
    n = min(n_panels, H.shape[0])
    picks = np.linspace(0, H.shape[0] - 1, n).astype(int)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), squeeze=False)
    S, L = H.shape[1], F.shape[1]
    for ax, i in zip(axes[:, 0], picks):
        ax.plot(np.arange(S), H[i, :, channel], color="gray", lw=0.9, label="history")
        ax.plot(np.arange(S, S + L), F[i, :, channel], color="black", lw=1.0, label="truth")
        ax.plot(np.arange(S, S + L), preds[i, :, channel], color="tab:red", lw=1.0,
                label="prediction")
        ax.axvline(S - 0.5, color="k", lw=0.5, ls=":")
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper left", fontsize=8)
    axes[-1, 0].set_xlabel("time step")
    return _finish(fig, path)


def save_forecast_line(history_tail, pred, path: str | Path, channel: int = 0) -> Path:
    """History tail plus the forecast continuation for one channel."""
    fig, ax = plt.subplots(figsize=(7, 3))
    S, L = history_tail.shape[0], pred.shape[0]
    ax.plot(np.arange(S), history_tail[:, channel], color="gray", lw=0.9,
            label="input")
    ax.plot(np.arange(S, S + L), pred[:, channel], color="tab:red", lw=1.1,
            label="forecast")
    ax.axvline(S - 0.5, color="k", lw=0.5, ls=":")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    ax.set_xlabel("time step")
    return _finish(fig, path)


def save_variant_bars(reports, path: str | Path) -> Path:
    """Grouped MSE bars per (task, dataset) with one bar per variant."""
    groups: dict[str, list] = {}
    for r in reports:
        groups.setdefault(f"{r.task}/{r.dataset}", []).append(r)
    fig, ax = plt.subplots(figsize=(max(5, 2.2 * len(groups) + 2), 3.5))
    width = 0.8 / max(len(v) for v in groups.values())
    for gi, (label, rows) in enumerate(groups.items()):
        for vi, r in enumerate(rows):
            x = gi + vi * width
            val = r.mse if np.isfinite(r.mse) else 0.0
            ax.bar(x, val, width=width, label=r.variant if gi == 0 else None)
            if not np.isfinite(r.mse):
                ax.text(x, 0.01, "failed", rotation=90, fontsize=7)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(groups))])
    ax.set_xticklabels(list(groups), fontsize=8)
    ax.set_ylabel("test MSE")
    ax.legend(fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)


def save_convergence_profile(n_steps, mses, path: str | Path) -> Path:
    """Test MSE as a function of the ODE step count."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(n_steps, mses, marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("ODE steps")
    ax.set_ylabel("test MSE")
    ax.grid(alpha=0.3)
    return _finish(fig, path)
