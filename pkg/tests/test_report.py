"""Report aggregation, table formatting, and figure output."""
import csv
import json

import pytest

from promptshot.errors import EmptyResults
from promptshot.report import (
    aggregate,
    build_table,
    emit_report,
    format_cell,
    load_records,
)


def summary(method, dataset, mean, std, metric="accuracy"):
    return {
        "record": "summary", "method": method, "dataset": dataset,
        "metric": metric, "mean": mean, "std": std,
        "completed_seeds": 5, "failed_seeds": 0,
    }


def seed_record(method, dataset, seed, test_metric, metric="accuracy"):
    return {
        "record": "seed", "method": method, "dataset": dataset, "metric": metric,
        "seed": seed, "test_metric": test_metric, "dev_metric": test_metric,
        "best_step": 100, "wall_time": None,
        "hyper_parameters": {"learning_rate": 1e-5, "batch_size": 2},
    }


class TestFormatCell:
    def test_documented_example(self):
        assert format_cell(92.65, 0.94) == "92.7 (0.9)"

    def test_zero_std(self):
        assert format_cell(50.0, 0.0) == "50.0 (0.0)"


class TestAggregate:
    def test_summary_records_preferred(self):
        records = [
            summary("m", "d", 0.8, 0.05),
            seed_record("m", "d", 1, 0.2),
        ]
        agg = aggregate(records)
        assert agg[("m", "d")]["mean"] == pytest.approx(80.0)
        assert agg[("m", "d")]["std"] == pytest.approx(5.0)

    def test_seed_fallback_population_std(self):
        records = [seed_record("m", "d", 1, 0.8), seed_record("m", "d", 2, 0.9)]
        agg = aggregate(records)
        assert agg[("m", "d")]["mean"] == pytest.approx(85.0)
        assert agg[("m", "d")]["std"] == pytest.approx(5.0)

    def test_empty_raises(self):
        with pytest.raises(EmptyResults):
            aggregate([{"record": "trial"}])


class TestBuildTable:
    def test_layout_and_missing_cells(self):
        records = [
            summary("a", "d1", 0.9, 0.01),
            summary("b", "d2", 0.7, 0.02, metric="f1"),
        ]
        header, rows = build_table(aggregate(records))
        assert header == ["method", "d1 (acc)", "d2 (F1)"]
        assert rows == [
            ["a", "90.0 (1.0)", "-"],
            ["b", "-", "70.0 (2.0)"],
        ]

    def test_metric_labels(self):
        records = [
            summary("m", "d1", 0.5, 0.0, metric="matthews"),
            summary("m", "d2", 0.5, 0.0, metric="pearson"),
        ]
        header, _ = build_table(aggregate(records))
        assert header[1:] == ["d1 (Matt.)", "d2 (Pear.)"]


class TestEmitReport:
    def test_writes_all_three_outputs(self, tmp_path):
        records = [summary("a", "d", 0.925, 0.009), summary("b", "d", 0.4, 0.1)]
        paths = emit_report(records, tmp_path / "out")
        assert set(paths) == {"markdown", "csv", "figure"}
        md = paths["markdown"].read_text()
        assert "| a | 92.5 (0.9) |" in md
        with open(paths["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["method", "d (acc)"]
        assert rows[1] == ["a", "92.5 (0.9)"]
        figure = paths["figure"].read_bytes()
        assert figure[:8] == b"\x89PNG\r\n\x1a\n"

    def test_empty_records_raise(self, tmp_path):
        with pytest.raises(EmptyResults):
            emit_report([], tmp_path)

    def test_load_records_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        records = [summary("a", "d", 0.5, 0.0), seed_record("a", "d", 1, 0.5)]
        path.write_text("".join(json.dumps(r) + "\n" for r in records))
        assert load_records(path) == records
