"""Command-line interface: subcommands, config files, error records."""
import json

import pytest
from click.testing import CliRunner

from promptshot.cli import main


@pytest.fixture
def runner():
    return CliRunner()


class TestBaselineCommand:
    def test_majority(self, runner):
        result = runner.invoke(main, ["baseline", "--kind", "majority"])
        assert result.exit_code == 0
        assert "majority accuracy" in result.output

    def test_zero_shot(self, runner):
        result = runner.invoke(main, ["baseline", "--kind", "zero_shot"])
        assert result.exit_code == 0
        assert "zero_shot accuracy" in result.output

    def test_unknown_prompt_emits_json_error(self, runner):
        result = runner.invoke(main, ["baseline", "--kind", "zero_shot", "--prompt", "nope"])
        assert result.exit_code == 1
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] and "nope" in record["message"]


class TestRunCommand:
    def test_small_protocol_run(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv("PROMPTSHOT_OUTPUT_DIR", str(tmp_path))
        result = runner.invoke(
            main,
            [
                "run", "--shots", "4", "--steps", "40", "--eval-every", "20",
                "--seeds", "13", "--test-fraction", "0.05",
            ],
        )
        assert result.exit_code == 0, result.output
        records = [
            json.loads(l) for l in (tmp_path / "results.jsonl").read_text().splitlines()
        ]
        assert records[-1]["record"] == "summary"
        assert sum(r["record"] == "trial" for r in records) == 9

    def test_config_file_with_flag_override(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv("PROMPTSHOT_OUTPUT_DIR", str(tmp_path))
        config = tmp_path / "run.ini"
        config.write_text(
            "[protocol]\nshots = 4\nsteps = 40\neval_every = 20\nseeds = 13,21\n"
            "[task]\ntest_fraction = 0.05\n"
        )
        result = runner.invoke(
            main, ["run", "--config", str(config), "--seeds", "13"]
        )
        assert result.exit_code == 0, result.output
        records = [
            json.loads(l) for l in (tmp_path / "results.jsonl").read_text().splitlines()
        ]
        # the flag overrides the config's two seeds with a single one
        assert {r["seed"] for r in records if r["record"] == "seed"} == {13}

    def test_missing_dataset_is_clean_error(self, runner):
        result = runner.invoke(main, ["run", "--dataset", "/no/such/file.tsv"])
        assert result.exit_code != 0


class TestSearchCommands:
    def test_search_templates(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv("PROMPTSHOT_OUTPUT_DIR", str(tmp_path))
        result = runner.invoke(
            main, ["search-templates", "--beam-width", "6", "--max-len", "6"]
        )
        assert result.exit_code == 0, result.output
        content = (tmp_path / "template_candidates.tsv").read_text()
        assert "[MASK]" in content

    def test_search_labels(self, runner, tmp_path, monkeypatch):
        monkeypatch.setenv("PROMPTSHOT_OUTPUT_DIR", str(tmp_path))
        result = runner.invoke(
            main,
            [
                "search-labels", "--pruned-size", "3", "--num-assignments", "3",
                "--steps", "5", "--shots", "8",
            ],
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "label_candidates.tsv").read_text().count("\n") >= 1


class TestReportCommand:
    def test_report_from_jsonl(self, runner, tmp_path):
        results = tmp_path / "results.jsonl"
        results.write_text(
            json.dumps(
                {
                    "record": "summary", "method": "m", "dataset": "d",
                    "metric": "accuracy", "mean": 0.9, "std": 0.05,
                    "completed_seeds": 5, "failed_seeds": 0,
                }
            )
            + "\n"
        )
        out = tmp_path / "report"
        result = runner.invoke(
            main, ["report", "--results", str(results), "--output-dir", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert (out / "table.md").exists()
        assert (out / "table.csv").exists()
        assert (out / "scores.png").exists()

    def test_missing_results_file(self, runner):
        result = runner.invoke(main, ["report", "--results", "/no/such.jsonl"])
        assert result.exit_code != 0
