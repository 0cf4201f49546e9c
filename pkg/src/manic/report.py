"""Evaluation reports: delimited tables plus matplotlib figures on disk.

Every eval artifact comes in two forms side by side: a CSV for machines
and a rendered PNG for humans. Figures cover the three standard views:
true vs estimated state trajectories (colored by time), open-loop rollout
error against the frame-persistence baseline, and imagined vs executed
frames.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .learning import Observation


def write_csv(path, header: list[str], rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def save_state_alignment_figure(true_states: np.ndarray, estimated: np.ndarray,
                                r2: list[float], path) -> None:
    """Side-by-side scatter of hidden states and their estimates, both
    colored by time so trajectory structure is comparable."""
    t = len(true_states)
    colors = np.arange(t)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    axes[0].scatter(true_states[:, 0], true_states[:, 1], c=colors, cmap="rainbow", s=6)
    axes[0].set_title("hidden states")
    axes[0].set_xlabel("dim 0")
    axes[0].set_ylabel("dim 1")
    axes[1].scatter(estimated[:, 0], estimated[:, 1], c=colors, cmap="rainbow", s=6)
    axes[1].set_title(f"estimated beliefs (R²={r2[0]:.2f}, {r2[1]:.2f})")
    axes[1].set_xlabel("dim 0")
    axes[1].set_ylabel("dim 1")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_rollout_error_figure(model_errors: np.ndarray, baseline_errors: np.ndarray,
                              path) -> None:
    """Mean absolute pixel error per rollout step, model vs persistence."""
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = np.arange(1, len(model_errors) + 1)
    ax.plot(steps, model_errors, label="model rollout")
    ax.plot(steps, baseline_errors, label="last-frame persistence", linestyle="--")
    ax.set_xlabel("steps ahead")
    ax.set_ylabel("mean abs pixel error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_frame_comparison_figure(imagined: list[Observation],
                                 executed: list[Observation], path,
                                 max_cols: int = 6) -> None:
    """Two rows of frames: what the agent imagined vs what happened."""
    n = min(len(imagined), len(executed), max_cols)
    idx = np.unique(np.linspace(0, min(len(imagined), len(executed)) - 1, n).astype(int))
    fig, axes = plt.subplots(2, len(idx), figsize=(2.0 * len(idx), 3.6), squeeze=False)
    for col, k in enumerate(idx):
        axes[0][col].imshow(np.clip(imagined[k].as_array(), 0, 1))
        axes[0][col].set_title(f"t={k}", fontsize=8)
        axes[1][col].imshow(np.clip(executed[k].as_array(), 0, 1))
        for row in (0, 1):
            axes[row][col].set_xticks([])
            axes[row][col].set_yticks([])
    axes[0][0].set_ylabel("imagined", fontsize=9)
    axes[1][0].set_ylabel("executed", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_curve_figure(losses: dict[str, list[float]], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, series in losses.items():
        if series:
            ax.plot(series, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def affine_alignment_r2(estimated: np.ndarray, true_states: np.ndarray) -> list[float]:
    """Best affine map from estimated beliefs onto each true dimension;
    returns per-dimension R^2."""
    x = np.column_stack([estimated, np.ones(len(estimated))])
    out = []
    for dim in range(true_states.shape[1]):
        y = true_states[:, dim]
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        denom = np.sum((y - y.mean()) ** 2)
        out.append(float(1.0 - np.sum(resid ** 2) / denom) if denom > 0 else 0.0)
    return out
