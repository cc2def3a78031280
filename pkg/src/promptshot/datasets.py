"""Task descriptions, TSV dataset loading, and the bundled synthetic data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ParseError, UnknownLabel
from .inference import RegressionSpec
from .schema import LabeledExample


@dataclass(frozen=True)
class Task:
    """What kind of prediction a dataset asks for and how it is scored."""

    name: str
    labels: Optional[tuple[str, ...]] = None        # None for regression
    regression: Optional[RegressionSpec] = None
    metric: str = "accuracy"
    positive_label: Optional[str] = None            # binary-F1 target class
    is_pair: bool = False

    def __post_init__(self) -> None:
        if (self.labels is None) == (self.regression is None):
            raise ValueError("task must be exactly one of classification or regression")

    @property
    def is_regression(self) -> bool:
        return self.regression is not None

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 2  # regression splits into two median-side pseudo-classes
        return len(self.labels)


def load_dataset(
    path,
    regression: Optional[RegressionSpec] = None,
    metric: Optional[str] = None,
    positive_label: Optional[str] = None,
) -> tuple[Task, list[LabeledExample]]:
    """Read a TSV with header ``sentence1[<TAB>sentence2]<TAB>label``.

    The label vocabulary is inferred from the file and frozen into the
    returned task (sorted ascending).  Pass a regression spec to read the
    label column as real values instead.
    """
    path = Path(path)
    examples: list[LabeledExample] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:1] != ["sentence1"] or header[-1] != "label":
            raise ParseError(f"{path}: header must be sentence1[, sentence2], label, got {header}")
        is_pair = header == ["sentence1", "sentence2", "label"]
        if not is_pair and header != ["sentence1", "label"]:
            raise ParseError(f"{path}: unsupported header {header}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            raw_label = row[-1]
            if regression is not None:
                try:
                    label: str | float = float(raw_label)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric regression label {raw_label!r}") from None
            else:
                label = raw_label
            examples.append(
                LabeledExample(
                    id=f"{path.stem}-{lineno}",
                    sentence1=row[0],
                    sentence2=row[1] if is_pair else None,
                    label=label,
                )
            )
    if not examples:
        raise ParseError(f"{path}: no data rows")
    if regression is not None:
        task = Task(
            name=path.stem,
            regression=regression,
            metric=metric or "pearson",
            is_pair=is_pair,
        )
    else:
        labels = tuple(sorted({str(ex.label) for ex in examples}))
        task = Task(
            name=path.stem,
            labels=labels,
            metric=metric or "accuracy",
            positive_label=positive_label,
            is_pair=is_pair,
        )
    return task, examples


def check_label(task: Task, label) -> None:
    if task.labels is not None and label not in task.labels:
        raise UnknownLabel(f"label {label!r} not in task label set {task.labels}")


def _data_path(name: str):
    return resources.files("promptshot.data").joinpath(name)


def synthetic_sentiment_path():
    """Bundled lexically separable two-class sentiment dataset."""
    return _data_path("synthetic_sentiment.tsv")


def manual_prompts_path():
    """Bundled manual prompt file (one prompt per task)."""
    return _data_path("manual_prompts.tsv")
