"""Report rendering: structured-text metrics, TSV tables, and the figures
saved alongside them (CMC curve, loss curves, ablation bars, sweeps).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluator import MetricsReport
from .trainer import RunLog


def format_metrics_report(report: MetricsReport) -> str:
    """Canonical text form: stable field order, repr floats, byte-reproducible."""
    lines = [
        "retrieval-report v1",
        f"checkpoint_hash={report.checkpoint_hash}",
        f"protocol={report.protocol}",
        f"n_queries={report.n_queries}",
        f"n_skipped={report.n_skipped}",
        f"map={report.map!r}",
    ]
    for k, value in enumerate(report.cmc, start=1):
        lines.append(f"cmc{k}={float(value)!r}")
    return "\n".join(lines) + "\n"


def write_metrics_report(path, report: MetricsReport) -> None:
    Path(path).write_text(format_metrics_report(report), encoding="utf-8")


def write_ranked_lists(path, report: MetricsReport) -> None:
    """Per-query top-k dump: query id, then ranked gallery ids with hit flags."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\trank\tgallery_id\trelevant\n")
        for ranked in report.ranked_lists:
            for rank, (gid, rel) in enumerate(zip(ranked.gallery_ids, ranked.relevance), start=1):
                fh.write(f"{ranked.query_id}\t{rank}\t{gid}\t{int(rel)}\n")


def write_tsv(path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


# -- figures -------------------------------------------------------------------


def save_cmc_figure(path, report: MetricsReport) -> None:
    ranks = np.arange(1, len(report.cmc) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ranks, report.cmc, marker="o")
    ax.set_xlabel("rank")
    ax.set_ylabel("matching rate")
    ax.set_title(f"CMC (mAP={report.map:.3f})")
    ax.set_ylim(0.0, 1.02)
    ax.set_xticks(ranks)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(path, log: RunLog) -> None:
    steps = np.arange(len(log.records))
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for key in ("l_id", "l_tri", "l_t2i", "l_i2t"):
        ax.plot(steps, [getattr(r, key) for r in log.records], label=key, linewidth=1)
    totals = [r.l_id + r.l_tri + r.l_t2i + r.l_i2t for r in log.records]
    ax.plot(steps, totals, label="total", color="black", linewidth=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_component_figure(path, summary: dict[str, tuple[float, float]]) -> None:
    """Bar chart of mean mAP / rank-1 per ablation arm."""
    arms = list(summary)
    maps = [summary[a][0] for a in arms]
    r1s = [summary[a][1] for a in arms]
    x = np.arange(len(arms))
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.bar(x - 0.2, maps, width=0.4, label="mAP")
    ax.bar(x + 0.2, r1s, width=0.4, label="rank-1")
    ax.set_xticks(x)
    ax.set_xticklabels(arms, rotation=15, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(path, xlabel: str, xs: list, map_means: list[float],
                      r1_means: list[float]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, map_means, marker="o", label="mAP")
    ax.plot(xs, r1_means, marker="s", label="rank-1")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("metric")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
