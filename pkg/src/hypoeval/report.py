"""Meta-evaluation report rendering: JSON, aligned text, TSV, and figures.

The figure path uses the Agg backend so report generation works headless;
matplotlib is imported lazily inside the figure functions.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

from .stats import MetaRecord
from .types import CorrelationReport

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = "1"


def report_to_dict(report: CorrelationReport, label: str) -> dict:
    return {
        "version": REPORT_FORMAT_VERSION,
        "label": label,
        "mode": report.mode,
        "aggregate": {
            "spearman": report.aggregate_spearman,
            "pearson": report.aggregate_pearson,
        },
        "n_records": report.n_records,
        "excluded_records": report.excluded_records,
        "weighted": report.weighted,
        "per_group": {
            gid: {
                "n": g.n,
                "spearman": g.spearman,
                "pearson": g.pearson,
                "all_equal": g.all_equal,
            }
            for gid, g in sorted(report.per_group.items())
        },
        "skipped_groups": [
            {"group_id": s.group_id, "reason": s.reason, "n": s.n}
            for s in report.skipped_groups
        ],
    }


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def render_text_table(report: CorrelationReport, label: str) -> str:
    """Aligned plain-text table: one summary row, then per-group rows."""
    lines: list[str] = []
    header = ["dataset/aspect", "mode", "n", "groups", "spearman", "pearson"]
    summary = [
        label,
        report.mode,
        str(report.n_records),
        str(len(report.per_group)) if report.mode == "grouped" else "-",
        _fmt(report.aggregate_spearman),
        _fmt(report.aggregate_pearson),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(header, summary)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join(v.ljust(w) for v, w in zip(summary, widths)))

    if report.per_group:
        lines.append("")
        gheader = ["group", "n", "spearman", "pearson", "all_equal"]
        rows = [
            [gid, str(g.n), _fmt(g.spearman), _fmt(g.pearson),
             "yes" if g.all_equal else ""]
            for gid, g in sorted(report.per_group.items())
        ]
        gwidths = [
            max(len(gheader[i]), *(len(r[i]) for r in rows))
            for i in range(len(gheader))
        ]
        lines.append("  ".join(h.ljust(w) for h, w in zip(gheader, gwidths)))
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, gwidths)))
    for skipped in report.skipped_groups:
        lines.append(
            f"skipped group {skipped.group_id}: {skipped.reason} (n={skipped.n})"
        )
    if report.excluded_records:
        lines.append(f"excluded records without a final score: {report.excluded_records}")
    return "\n".join(lines) + "\n"


def render_delimited(report: CorrelationReport, label: str, sep: str = "\t") -> str:
    """Delimited per-group rows plus an ALL aggregate row."""
    lines = [sep.join(["group_id", "n", "spearman", "pearson", "all_equal"])]
    for gid, g in sorted(report.per_group.items()):
        lines.append(
            sep.join([gid, str(g.n), repr(g.spearman), repr(g.pearson),
                      "1" if g.all_equal else "0"])
        )
    lines.append(
        sep.join([
            f"ALL:{label}",
            str(report.n_records),
            repr(report.aggregate_spearman),
            repr(report.aggregate_pearson),
            "0",
        ])
    )
    return "\n".join(lines) + "\n"


def render_figures(
    report: CorrelationReport,
    records: Sequence[MetaRecord],
    out_stem: Path,
) -> list[Path]:
    """Write a predicted-vs-human scatter and a per-group correlation chart."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    written: list[Path] = []
    scored = [r for r in records if r.predicted is not None]

    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(
        [r.human for r in scored],
        [r.predicted for r in scored],
        s=14, alpha=0.6, edgecolors="none",
    )
    lo = min(min(r.human for r in scored), min(r.predicted for r in scored))
    hi = max(max(r.human for r in scored), max(r.predicted for r in scored))
    ax.plot([lo, hi], [lo, hi], linestyle="--", linewidth=1, color="gray")
    ax.set_xlabel("human score")
    ax.set_ylabel("predicted score")
    ax.set_title(
        f"spearman={report.aggregate_spearman:.3f} "
        f"pearson={report.aggregate_pearson:.3f} ({report.mode})"
    )
    fig.tight_layout()
    scatter_path = out_stem.with_name(out_stem.name + "_scatter.png")
    fig.savefig(scatter_path, dpi=110)
    plt.close(fig)
    written.append(scatter_path)

    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * max(len(report.per_group), 2)), 3.5))
    if report.per_group:
        gids = sorted(report.per_group)
        xs = range(len(gids))
        ax.bar(
            [x - 0.2 for x in xs],
            [report.per_group[g].spearman for g in gids],
            width=0.4, label="spearman",
        )
        ax.bar(
            [x + 0.2 for x in xs],
            [report.per_group[g].pearson for g in gids],
            width=0.4, label="pearson",
        )
        ax.set_xticks(list(xs))
        ax.set_xticklabels(gids, rotation=45, ha="right", fontsize=7)
    else:
        ax.bar([-0.2], [report.aggregate_spearman], width=0.4, label="spearman")
        ax.bar([0.2], [report.aggregate_pearson], width=0.4, label="pearson")
        ax.set_xticks([0])
        ax.set_xticklabels(["dataset"])
    ax.set_ylim(-1.05, 1.05)
    ax.axhline(0.0, linewidth=0.8, color="black")
    ax.set_ylabel("correlation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    groups_path = out_stem.with_name(out_stem.name + "_groups.png")
    fig.savefig(groups_path, dpi=110)
    plt.close(fig)
    written.append(groups_path)
    return written


def write_report_files(
    report: CorrelationReport,
    records: Sequence[MetaRecord],
    out_json: str | Path,
    label: str,
    figures: bool = True,
) -> dict[str, Path]:
    """Write the report as JSON, aligned text, and TSV, plus figures."""
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    stem = out_json.with_suffix("")
    paths: dict[str, Path] = {"json": out_json}
    out_json.write_text(
        json.dumps(report_to_dict(report, label), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    text_path = stem.with_suffix(".txt")
    text_path.write_text(render_text_table(report, label), encoding="utf-8")
    paths["text"] = text_path
    tsv_path = stem.with_suffix(".tsv")
    tsv_path.write_text(render_delimited(report, label), encoding="utf-8")
    paths["tsv"] = tsv_path
    if figures:
        for fig_path in render_figures(report, records, stem):
            paths[fig_path.name] = fig_path
    return paths
