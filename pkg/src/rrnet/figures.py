"""Figure rendering for the report paths (headless matplotlib)."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_f_curve(report, path) -> None:
    """F-measure across the 256 binarization thresholds."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    t = np.arange(len(report.f_curve)) / 255.0
    ax.plot(t, report.f_curve, lw=1.5)
    ax.axhline(report.max_f_beta, ls="--", lw=0.8, color="gray")
    ax.set_xlabel("threshold")
    ax.set_ylabel(r"$F_\beta$")
    ax.set_title(f"{report.dataset}: max F = {report.max_f_beta:.4f}, "
                 f"MAE = {report.mae:.4f}")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curve(log_path, path) -> None:
    """Per-iteration training losses from the JSONL log."""
    iters, totals, finals, bounds = [], [], [], []
    with open(log_path) as f:
        for line in f:
            rec = json.loads(line)
            iters.append(rec["iter"])
            totals.append(rec["total"])
            finals.append(rec["l_f"])
            bounds.append(rec["l_bf"])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(iters, totals, lw=1.0, label="total")
    ax.plot(iters, finals, lw=1.0, label="final BCE")
    if any(bounds):
        ax.plot(iters, bounds, lw=1.0, label="boundary IoU")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(param: str, values, reports, path) -> None:
    """One point per ablation value for max F and MAE."""
    fig, ax1 = plt.subplots(figsize=(5, 3.5))
    ax2 = ax1.twinx()
    fs = [r.max_f_beta for r in reports]
    maes = [r.mae for r in reports]
    ax1.plot(values, fs, "o-", color="C0", label="max F")
    ax2.plot(values, maes, "s--", color="C1", label="MAE")
    ax1.set_xlabel(param)
    ax1.set_ylabel("max F", color="C0")
    ax2.set_ylabel("MAE", color="C1")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_multirun(summary: dict, path) -> None:
    """Per-seed metric values with the mean +- population std band."""
    keys = [k for k in ("max_f_beta", "mae") if k in summary]
    fig, axes = plt.subplots(1, len(keys), figsize=(4.5 * len(keys), 3.5),
                             squeeze=False)
    for ax, key in zip(axes[0], keys):
        vals = summary[key]["values"]
        mean, std = summary[key]["mean"], summary[key]["std"]
        ax.plot(range(1, len(vals) + 1), vals, "o")
        ax.axhline(mean, color="gray", lw=1)
        ax.axhspan(mean - std, mean + std, color="gray", alpha=0.2)
        ax.set_title(f"{key}: {mean:.4f} +- {std:.2e}")
        ax.set_xlabel("run")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
