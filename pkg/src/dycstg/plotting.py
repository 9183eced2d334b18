"""Report figures written to files (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3, "axes.spines.top": False,
         "axes.spines.right": False, "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history: list[dict], path) -> Path:
    """Training loss and validation F1 per epoch."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ep = [r["epoch"] for r in history]
        ax.plot(ep, [r["train_loss"] for r in history], color="tab:blue", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("focal loss", color="tab:blue")
        ax2 = ax.twinx()
        ax2.plot(ep, [r["val_f1"] for r in history], color="tab:orange", label="val F1")
        ax2.set_ylabel("validation F1", color="tab:orange")
        ax2.set_ylim(0, 1)
        ax2.grid(False)
        return _save(fig, path)


def plot_ablation(rows: list[tuple[str, float, float | None]], path) -> Path:
    """Grouped bars of test F1 and AUC per variant; ``rows`` = (name, f1, auc)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.5, 3.2))
        x = np.arange(len(rows))
        f1 = [r[1] for r in rows]
        auc = [r[2] if r[2] is not None else np.nan for r in rows]
        ax.bar(x - 0.2, f1, width=0.4, label="F1")
        ax.bar(x + 0.2, auc, width=0.4, label="AUC")
        ax.set_xticks(x, [r[0] for r in rows], rotation=20)
        ax.set_ylim(0, 1)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_grid(grid: np.ndarray, depths, path) -> Path:
    """Heat map of test F1 over graph depth (rows) and temporal depth (columns)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3.4))
        im = ax.imshow(grid, cmap="viridis", origin="lower")
        ax.set_xticks(range(len(depths)), depths)
        ax.set_yticks(range(len(depths)), depths)
        ax.set_xlabel("temporal layers")
        ax.set_ylabel("graph layers")
        ax.grid(False)
        for i in range(grid.shape[0]):
            for j in range(grid.shape[1]):
                ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center",
                        color="white" if grid[i, j] < grid.mean() else "black")
        fig.colorbar(im, ax=ax, label="test F1")
        return _save(fig, path)
