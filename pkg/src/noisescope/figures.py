"""Matplotlib figures rendered next to the delimited report outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["run_figure", "sweep_figure"]


def run_figure(payload: dict, path: str | Path) -> None:
    """Per-round expansion and correction counts for one run."""
    exp = payload.get("expansion_added", [])
    corr = payload.get("per_round_corrections", [])
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    axes[0].bar(range(1, len(exp) + 1), exp, color="#4878d0")
    axes[0].set_xlabel("expansion round")
    axes[0].set_ylabel("nodes admitted")
    axes[0].set_title("pseudo-label expansion")
    if exp:
        axes[0].set_xticks(range(1, len(exp) + 1))
    axes[1].bar(range(1, len(corr) + 1), corr, color="#d65f5f")
    axes[1].set_xlabel("correction round")
    axes[1].set_ylabel("labels changed")
    axes[1].set_title("iterative correction")
    if corr:
        axes[1].set_xticks(range(1, len(corr) + 1))
    acc = payload.get("accuracy")
    if acc is not None:
        fig.suptitle(f"mode={payload.get('mode')}  accuracy={100 * acc:.2f}%")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(payload: dict, path: str | Path) -> None:
    """Mean accuracy with std error bars across the sweep axis."""
    rows = [r for r in payload.get("rows", []) if r.get("mean") is not None]
    axis = payload.get("axis", "value")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        labels = [str(r["value"]) for r in rows]
        means = [100.0 * r["mean"] for r in rows]
        stds = [100.0 * (r["std"] or 0.0) for r in rows]
        xs = range(len(rows))
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=4, color="#4878d0")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels)
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"sweep over {axis}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
