"""Rendering of drift reports to delimited text and figure files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .geometry import REGION_ORDER
from .pipeline import DriftReport


def write_drift_csv(report: DriftReport, path: str | Path) -> Path:
    """Write one row per consecutive frame pair, with per-region columns."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_start", "pair_end", "mean_displacement", *REGION_ORDER])
        for pair in report.pairs:
            writer.writerow(
                [
                    pair["pair"][0],
                    pair["pair"][1],
                    f"{pair['mean']:.9g}",
                    *(f"{pair['regions'][r]:.9g}" for r in REGION_ORDER),
                ]
            )
    return path


def render_drift_figure(report: DriftReport, path: str | Path) -> Path:
    """Plot displacement per frame pair, overall and per region."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    xs = [pair["pair"][0] for pair in report.pairs]
    if xs:
        ax.plot(
            xs,
            [pair["mean"] for pair in report.pairs],
            color="black",
            linewidth=2,
            marker="o",
            label="all regions",
        )
        for region in REGION_ORDER:
            ax.plot(
                xs,
                [pair["regions"][region] for pair in report.pairs],
                linewidth=1,
                alpha=0.7,
                label=region,
            )
        ax.axhline(report.mean, color="gray", linestyle="--", linewidth=1, label="mean")
    ax.set_xlabel("frame pair (t, t+1)")
    ax.set_ylabel("mean landmark displacement [px]")
    ax.set_title("Inter-frame feature drift")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_drift_report_files(report: DriftReport, out_dir: str | Path) -> list[Path]:
    """Write the CSV and the figure into ``out_dir``; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        write_drift_csv(report, out_dir / "drift_report.csv"),
        render_drift_figure(report, out_dir / "drift_report.png"),
    ]
