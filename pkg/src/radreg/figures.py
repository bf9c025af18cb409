"""Matplotlib figure output for the report-writing paths.

Every CLI command that writes a delimited report also renders a small
figure next to it; these helpers keep all plotting in one place.  The Agg
backend is forced so the package works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import ExperimentReport
from .pipeline import RegistrationResult


def save_loss_curves(result: RegistrationResult, path) -> None:
    """Per-generation best loss for the coarse and fine stages."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, name, stage in (
        (axes[0], "coarse (mNCC)", result.coarse),
        (axes[1], "fine (GC)", result.fine),
    ):
        curve = np.asarray(stage.curve, dtype=float)
        if curve.size:
            ax.plot(np.arange(curve.size), curve, lw=1.0)
        ax.set_title(f"{name}: {stage.termination.value}", fontsize=10)
        ax.set_xlabel("generation")
        ax.set_ylabel("best loss in generation")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_experiment_figure(report: ExperimentReport, path) -> None:
    """Initial-vs-final mTRE scatter plus sorted error curves."""
    initial = np.asarray(report.initial_mtres(), dtype=float)
    final = np.asarray(report.final_mtres(), dtype=float)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    lim = max(1e-3, float(initial.max()), float(final.max()))
    axes[0].scatter(initial, final, s=18, alpha=0.8)
    axes[0].plot([0, lim], [0, lim], "k--", lw=0.8)
    axes[0].set_xlabel("initial mTRE (mm)")
    axes[0].set_ylabel("final mTRE (mm)")
    axes[0].set_title("per-trial registration error", fontsize=10)
    axes[0].grid(True, alpha=0.3)

    axes[1].plot(np.sort(initial), label="initial")
    axes[1].plot(np.sort(final), label="final")
    axes[1].set_xlabel("trial (sorted)")
    axes[1].set_ylabel("mTRE (mm)")
    axes[1].set_title("sorted mTRE distribution", fontsize=10)
    axes[1].legend(fontsize=9)
    axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(histories: dict, path) -> None:
    """Convergence curves (best loss so far, log scale) per benchmark run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curves in histories.items():
        for i, curve in enumerate(curves):
            best = np.minimum.accumulate(np.asarray(curve, dtype=float))
            floor = np.maximum(best, 1e-16)
            ax.semilogy(floor, lw=0.8, alpha=0.7,
                        label=label if i == 0 else None)
    ax.set_xlabel("generation")
    ax.set_ylabel("best loss so far")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
