"""Matplotlib figure rendering for the report paths (bench and training).

Figures are written next to the delimited output; the CSVs stay the
canonical interchange format.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchRow, median_totals  # noqa: E402
from .training import EpochRecord  # noqa: E402


def render_bench_figure(rows: list[BenchRow], path: str | Path) -> None:
    """Log-log scaling plot: median tokenize/forward/total time vs n."""
    med_total = median_totals(rows)
    sizes = sorted(med_total)
    if not sizes:
        return
    by_part = {"tokenize": {}, "forward": {}}
    for row in rows:
        if row.warmup:
            continue
        by_part["tokenize"].setdefault(row.n, []).append(row.tokenize_seconds)
        by_part["forward"].setdefault(row.n, []).append(row.forward_seconds)
    fig, axis = plt.subplots(figsize=(6, 4))
    axis.loglog(sizes, [med_total[n] for n in sizes], "o-", label="total")
    for part, vals in by_part.items():
        med = [sorted(vals[n])[len(vals[n]) // 2] for n in sizes]
        axis.loglog(sizes, med, "s--", label=part)
    ref = [med_total[sizes[0]] * n / sizes[0] for n in sizes]
    axis.loglog(sizes, ref, ":", color="gray", label="linear reference")
    axis.set_xlabel("nodes")
    axis.set_ylabel("seconds (median)")
    axis.set_title("tokenize + forward scaling")
    axis.legend()
    axis.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_figure(history: list[EpochRecord], path: str | Path) -> None:
    """Loss and metric curves per split over epochs."""
    if not history:
        return
    splits = sorted({rec.split for rec in history})
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(10, 4))
    for split in splits:
        epochs = [r.epoch for r in history if r.split == split]
        ax_loss.plot(epochs, [r.loss for r in history if r.split == split],
                     label=split)
        ax_metric.plot(epochs, [r.metric for r in history if r.split == split],
                       label=split)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.grid(alpha=0.3)
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylabel("metric")
    ax_metric.legend()
    ax_metric.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
