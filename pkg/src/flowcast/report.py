"""Figure rendering; every plot lands next to its CSV/JSON artifact."""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    fig.savefig(tmp, dpi=110, bbox_inches="tight", format=path.suffix.lstrip(".") or "png")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def training_curves(history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["train_loss"] for r in history], label="train L1")
    ax.plot(epochs, [r["val_mae"] for r in history], label="val MAE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("flow units")
    ax.legend()
    ax.set_title("training progress")
    return _save(fig, path)


def alpha_trajectories(alpha_history: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [r["epoch"] for r in alpha_history]
    keys = [k for k in alpha_history[0] if k != "epoch"]
    for k in keys:
        ax.plot(epochs, [r[k] for r in alpha_history], label=k, linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("graph mixing weight")
    if len(keys) <= 14:
        ax.legend(fontsize=6)
    ax.set_title("adjacency mixing weights")
    return _save(fig, path)


def graph_heatmap(A: np.ndarray, region_ids: list[str], title: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(A, cmap="viridis")
    ax.set_xticks(range(len(region_ids)), region_ids, rotation=90, fontsize=6)
    ax.set_yticks(range(len(region_ids)), region_ids, fontsize=6)
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return _save(fig, path)


def prediction_overlay(anchors, pred, truth, region_ids, path, region=0, horizon=1) -> Path:
    """Truth vs forecast for one region at one horizon across all anchors."""
    q = horizon - 1
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for c, (ax, label) in enumerate(zip(axes, ("inflow", "outflow"))):
        ax.plot(anchors, truth[:, region, q, c], label="observed", linewidth=1)
        ax.plot(anchors, pred[:, region, q, c], label="forecast", linewidth=1)
        ax.set_ylabel(label)
    axes[0].legend()
    axes[0].set_title(f"region {region_ids[region]}, {horizon} step(s) ahead")
    axes[1].set_xlabel("anchor step")
    return _save(fig, path)


def ablation_bars(rows: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    names = [r["variant"] for r in rows]
    ax.bar(range(len(rows)), [r["mae"] for r in rows])
    ax.set_xticks(range(len(rows)), names, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("test MAE")
    ax.set_title("component knock-outs")
    return _save(fig, path)


def whatif_comparison(base, alt, path) -> Path:
    """Mean predicted flow per horizon, factual vs counter-factual context."""
    Q = base.shape[2]
    x = np.arange(1, Q + 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(x, base.mean(axis=(0, 1, 3)), "o-", label="factual")
    ax.plot(x, alt.mean(axis=(0, 1, 3)), "s--", label="counter-factual")
    ax.set_xticks(x)
    ax.set_xlabel("steps ahead")
    ax.set_ylabel("mean predicted flow")
    ax.legend()
    ax.set_title("context override effect")
    return _save(fig, path)


def flow_profiles(flow_values: np.ndarray, region_ids: list[str], steps: int, path) -> Path:
    """First ``steps`` of each region's outflow, for eyeballing generated data."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, rid in enumerate(region_ids):
        ax.plot(flow_values[i, :steps, 1], label=rid, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("outflow")
    ax.legend(fontsize=6, ncols=2)
    ax.set_title("generated demand")
    return _save(fig, path)
