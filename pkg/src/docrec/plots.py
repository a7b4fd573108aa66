"""Figure rendering for the report CLI.

Each analytics output has a matching matplotlib renderer that writes a PNG
next to the delimited report: CTR bars with Wilson error bars, the
click-delay histogram, and the daily CTR time series.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import CTRReport, DelayHistogram, TimeSeriesPoint


def plot_ctr_report(report: CTRReport, path: str | Path, title: str = "") -> Path:
    rows = [r for r in report.rows if r.ctr is not None]
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rows)), 4))
    if rows:
        x = range(len(rows))
        ctrs = [100.0 * r.ctr for r in rows]
        yerr = [
            [100.0 * (r.ctr - r.wilson_lo) for r in rows],
            [100.0 * (r.wilson_hi - r.ctr) for r in rows],
        ]
        ax.bar(x, ctrs, yerr=yerr, capsize=3, color="#4878a8")
        ax.set_xticks(list(x))
        ax.set_xticklabels([r.bucket for r in rows], rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("CTR (%)")
    ax.set_xlabel(report.dimension)
    ax.set_title(title or f"CTR by {report.dimension}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_delay_histogram(hist: DelayHistogram, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = range(len(hist.buckets))
    ax.bar(x, [100.0 * b.fraction for b in hist.buckets], color="#4878a8")
    ax.set_xticks(list(x))
    ax.set_xticklabels([b.label for b in hist.buckets], rotation=30, ha="right")
    ax.set_ylabel("share of clicks (%)")
    ax.set_title(f"Click delay ({hist.total_clicks} clicks)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_time_series(points: list[TimeSeriesPoint], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    if points:
        ax.plot([p.day for p in points], [100.0 * p.ctr for p in points],
                marker="o", markersize=3, color="#4878a8")
        fig.autofmt_xdate()
    ax.set_ylabel("CTR (%)")
    ax.set_title("Daily CTR")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
