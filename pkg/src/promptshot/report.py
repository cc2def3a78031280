"""Results tables and figures from protocol JSONL records.

Rows are methods, columns are datasets (annotated with their metric), and
cells show "mean (std)" in percent with one decimal.  The same aggregate
feeds a markdown table, a CSV, and a grouped bar chart with error bars.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import EmptyResults

_METRIC_LABELS = {
    "accuracy": "acc",
    "f1": "F1",
    "matthews": "Matt.",
    "pearson": "Pear.",
}


def load_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def format_cell(mean: float, std: float) -> str:
    """Percent-scale values, one decimal: 92.65 / 0.94 -> "92.7 (0.9")."""
    return f"{mean:.1f} ({std:.1f})"


def aggregate(records: list[dict]) -> dict[tuple[str, str], dict]:
    """Collapse records to (method, dataset) -> mean/std/metric, in percent.

    Summary records are used directly; otherwise per-seed records are
    aggregated with the population standard deviation.
    """
    summaries: dict[tuple[str, str], dict] = {}
    seed_scores: dict[tuple[str, str], list[float]] = defaultdict(list)
    metrics: dict[tuple[str, str], str] = {}
    for rec in records:
        kind = rec.get("record")
        key = (rec.get("method", "unknown"), rec.get("dataset", "unknown"))
        if kind == "summary":
            summaries[key] = {
                "mean": 100.0 * rec["mean"],
                "std": 100.0 * rec["std"],
                "metric": rec.get("metric", "accuracy"),
            }
        elif kind == "seed":
            seed_scores[key].append(rec["test_metric"])
            metrics[key] = rec.get("metric", "accuracy")
    for key, scores in seed_scores.items():
        if key not in summaries:
            arr = np.array(scores)
            summaries[key] = {
                "mean": 100.0 * float(arr.mean()),
                "std": 100.0 * float(arr.std()),
                "metric": metrics[key],
            }
    if not summaries:
        raise EmptyResults("no summary or per-seed records found")
    return summaries


def _column_header(dataset: str, metric: str) -> str:
    return f"{dataset} ({_METRIC_LABELS.get(metric, metric)})"


def build_table(summaries: dict[tuple[str, str], dict]) -> tuple[list[str], list[list[str]]]:
    methods = sorted({m for m, _ in summaries})
    datasets = sorted({d for _, d in summaries})
    header = ["method"] + [
        _column_header(d, next(v["metric"] for (m, dd), v in summaries.items() if dd == d))
        for d in datasets
    ]
    rows = []
    for method in methods:
        row = [method]
        for dataset in datasets:
            cell = summaries.get((method, dataset))
            row.append(format_cell(cell["mean"], cell["std"]) if cell else "-")
        rows.append(row)
    return header, rows


def write_markdown(path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "|".join(["---"] * len(header)) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(row) + " |\n")


def write_csv(path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_figure(path, summaries: dict[tuple[str, str], dict]) -> None:
    """Grouped bar chart of mean scores with std error bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted({m for m, _ in summaries})
    datasets = sorted({d for _, d in summaries})
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(datasets))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(datasets)), 4.0))
    for i, method in enumerate(methods):
        means = [summaries.get((method, d), {}).get("mean", np.nan) for d in datasets]
        stds = [summaries.get((method, d), {}).get("std", 0.0) for d in datasets]
        ax.bar(x + i * width, means, width, yerr=stds, capsize=3, label=method)
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels(datasets, rotation=20, ha="right")
    ax.set_ylabel("score (%)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(records: list[dict], output_dir) -> dict[str, Path]:
    """Write table.md, table.csv, and scores.png; returns the paths."""
    if not records:
        raise EmptyResults("no result records")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summaries = aggregate(records)
    header, rows = build_table(summaries)
    paths = {
        "markdown": output_dir / "table.md",
        "csv": output_dir / "table.csv",
        "figure": output_dir / "scores.png",
    }
    write_markdown(paths["markdown"], header, rows)
    write_csv(paths["csv"], header, rows)
    write_figure(paths["figure"], summaries)
    return paths
