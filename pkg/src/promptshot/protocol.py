"""Few-shot evaluation protocol: split sampling, grid search with early
stopping, and multi-seed aggregation.

A split draws K training examples per class plus an equally sized (or
multiplied) development set, disjoint by id.  Each method is tuned over a
small learning-rate x batch-size grid, validating the dev metric every
``eval_every`` steps and keeping the best checkpoint, and final numbers
are the mean and population standard deviation over several split seeds.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .datasets import Task
from .demos import DemoConfig
from .errors import InsufficientData, NoSuccessfulTrial
from .schema import LabeledExample, Prompt
from .training import DemoSampler, evaluate_prompt, finetune_prompt

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (13, 21, 42, 87, 100)
DEFAULT_LEARNING_RATES = (1e-5, 2e-5, 5e-5)
DEFAULT_BATCH_SIZES = (2, 4, 8)
DEFAULT_STEPS = 1000
DEFAULT_EVAL_EVERY = 100

# fixed regime used when no development set is sampled
NO_DEV_SETTINGS = {"batch_size": 16, "learning_rate": 1e-5, "steps": 250}


@dataclass(frozen=True)
class GridPoint:
    learning_rate: float
    batch_size: int


def default_grid() -> list[GridPoint]:
    return [
        GridPoint(lr, bs) for lr in DEFAULT_LEARNING_RATES for bs in DEFAULT_BATCH_SIZES
    ]


@dataclass(frozen=True)
class FewShotSplit:
    seed: int
    train: tuple[LabeledExample, ...]
    dev: tuple[LabeledExample, ...]
    shots_per_class: int
    dev_multiplier: int = 1

    def __post_init__(self) -> None:
        train_ids = {ex.id for ex in self.train}
        if train_ids & {ex.id for ex in self.dev}:
            raise ValueError("train and dev splits overlap")
        if len(self.dev) != self.dev_multiplier * len(self.train):
            raise ValueError("dev size must be dev_multiplier times the train size")


def _pseudo_classes(task: Task, examples: list[LabeledExample]) -> dict[str, list[LabeledExample]]:
    if not task.is_regression:
        groups: dict[str, list[LabeledExample]] = {l: [] for l in task.labels}
        for ex in examples:
            if str(ex.label) in groups:
                groups[str(ex.label)].append(ex)
        return groups
    # regression: two pseudo-classes around the label median; exact-median
    # labels fall into the lower bin
    values = np.array([float(ex.label) for ex in examples])
    median = float(np.median(values))
    groups = {"below": [], "above": []}
    for ex in examples:
        groups["below" if float(ex.label) <= median else "above"].append(ex)
    return groups


def sample_split(
    task: Task,
    examples: list[LabeledExample],
    shots_per_class: int,
    seed: int,
    dev_multiplier: int = 1,
) -> FewShotSplit:
    """Per-class uniform sampling without replacement, deterministic in seed."""
    rng = np.random.default_rng(seed)
    groups = _pseudo_classes(task, examples)
    need = shots_per_class * (1 + dev_multiplier)
    train: list[LabeledExample] = []
    dev: list[LabeledExample] = []
    for label in sorted(groups):
        pool = groups[label]
        if len(pool) < need:
            raise InsufficientData(
                f"class {label!r} has {len(pool)} examples, needs {need} for K={shots_per_class}"
            )
        picks = rng.permutation(len(pool))[:need]
        chosen = [pool[i] for i in picks]
        train.extend(chosen[:shots_per_class])
        dev.extend(chosen[shots_per_class:])
    rng.shuffle(train)
    rng.shuffle(dev)
    return FewShotSplit(seed, tuple(train), tuple(dev), shots_per_class, dev_multiplier)


@dataclass
class TrialResult:
    learning_rate: float
    batch_size: int
    dev_metric: float
    test_metric: float
    best_step: int
    seed: int
    dev_history: list[tuple[int, float]] = field(default_factory=list)


class PromptMethod:
    """Prompt-based fine-tuning, optionally with sampled demonstrations."""

    name = "prompt_ft"

    def __init__(
        self,
        backend,
        prompt: Prompt,
        task: Task,
        demo_config: Optional[DemoConfig] = None,
        encoder=None,
        eval_num_sets: Optional[int] = None,
    ) -> None:
        self.backend = backend
        self.prompt = prompt
        self.task = task
        self.demo_config = demo_config
        self.encoder = encoder
        self.eval_num_sets = eval_num_sets
        if demo_config is not None:
            self.name = "prompt_ft_demo"

    def run_trial(
        self,
        split: FewShotSplit,
        point: GridPoint,
        steps: int,
        eval_every: int,
        test_examples: list[LabeledExample],
        seed: int,
    ) -> TrialResult:
        clone = self.backend.clone()
        sampler = None
        if self.demo_config is not None:
            sampler = DemoSampler(list(split.train), self.task, self.demo_config, self.encoder)
        rng = np.random.default_rng(seed)
        result = finetune_prompt(
            clone,
            self.prompt,
            self.task,
            list(split.train),
            steps=steps,
            batch_size=point.batch_size,
            learning_rate=point.learning_rate,
            rng=rng,
            demo_sampler=sampler,
            dev_examples=list(split.dev) if split.dev else None,
            eval_every=eval_every if split.dev else None,
            eval_num_sets=self.eval_num_sets,
        )
        if result.best_dev_metric is None:
            dev_metric = float("nan")
            best_step = steps
        else:
            dev_metric = result.best_dev_metric
            best_step = result.best_step
        test_metric = evaluate_prompt(
            clone,
            self.prompt,
            self.task,
            test_examples,
            sampler,
            np.random.default_rng(seed + 1),
            self.eval_num_sets,
        )
        return TrialResult(
            learning_rate=point.learning_rate,
            batch_size=point.batch_size,
            dev_metric=dev_metric,
            test_metric=test_metric,
            best_step=best_step,
            seed=split.seed,
            dev_history=result.dev_history,
        )


def grid_search(
    split: FewShotSplit,
    grid: list[GridPoint],
    method,
    test_examples: list[LabeledExample],
    *,
    steps: int = DEFAULT_STEPS,
    eval_every: int = DEFAULT_EVAL_EVERY,
    seed: int = 0,
    on_trial: Optional[Callable[[GridPoint, TrialResult], None]] = None,
) -> TrialResult:
    """One trial per grid point; best dev metric wins, earlier point on ties."""
    if not grid:
        raise ValueError("empty hyper-parameter grid")
    best: Optional[TrialResult] = None
    failures = 0
    for point in grid:
        try:
            trial = method.run_trial(split, point, steps, eval_every, test_examples, seed)
        except Exception:
            log.exception("trial failed at %s", point)
            failures += 1
            continue
        if on_trial is not None:
            on_trial(point, trial)
        if best is None or trial.dev_metric > best.dev_metric:
            best = trial
    if best is None:
        raise NoSuccessfulTrial(f"all {failures} grid trials failed")
    return best


@dataclass
class ProtocolResult:
    mean: float
    std: float
    per_seed: list[TrialResult]
    completed_seeds: int
    failed_seeds: int


def run_protocol(
    task: Task,
    examples: list[LabeledExample],
    test_examples: list[LabeledExample],
    method_factory: Callable[[FewShotSplit, int], object],
    *,
    shots_per_class: int = 16,
    seeds=DEFAULT_SEEDS,
    dev_multiplier: int = 1,
    grid: Optional[list[GridPoint]] = None,
    steps: int = DEFAULT_STEPS,
    eval_every: int = DEFAULT_EVAL_EVERY,
    jsonl_path=None,
    timing: bool = False,
    workers: int = 1,
) -> ProtocolResult:
    """Full pipeline per seed: split, method setup, grid search, test eval.

    Per-trial and per-seed records go to the JSONL file when given; wall
    times are recorded only when ``timing`` is set, so default output is
    byte-reproducible.  Per-seed failures are recorded and skipped; the
    aggregate covers completed seeds only.
    """
    if grid is None:
        grid = default_grid()
    records = _JsonlWriter(jsonl_path)

    def run_seed(seed: int):
        buffered: list[tuple] = []
        started = time.monotonic()
        try:
            split = sample_split(task, examples, shots_per_class, seed, dev_multiplier)
            method = method_factory(split, seed)
            if dev_multiplier == 0:
                point = GridPoint(NO_DEV_SETTINGS["learning_rate"], NO_DEV_SETTINGS["batch_size"])
                best = method.run_trial(
                    split, point, NO_DEV_SETTINGS["steps"], 0, test_examples, seed
                )
            else:
                best = grid_search(
                    split,
                    grid,
                    method,
                    test_examples,
                    steps=steps,
                    eval_every=eval_every,
                    seed=seed,
                    on_trial=lambda point, trial: buffered.append(
                        (method, trial, "trial", None)
                    ),
                )
        except Exception:
            log.exception("seed %d failed", seed)
            return None, buffered
        wall = time.monotonic() - started if timing else None
        buffered.append((method, best, "seed", wall))
        return best, buffered

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_seed, seeds))
    else:
        outcomes = [run_seed(seed) for seed in seeds]

    per_seed: list[TrialResult] = []
    failed = 0
    method_name = "unknown"
    for seed, (best, buffered) in zip(seeds, outcomes):
        for method, trial, record_type, wall in buffered:
            records.write_trial(method, task, trial, record_type=record_type, wall_time=wall)
        if best is None:
            failed += 1
            records.write_failure(task, seed)
        else:
            per_seed.append(best)
            method_name = getattr(method, "name", "unknown")
    if not per_seed:
        raise NoSuccessfulTrial("no seed completed")
    scores = np.array([t.test_metric for t in per_seed])
    result = ProtocolResult(
        mean=float(scores.mean()),
        std=float(scores.std()),  # population standard deviation
        per_seed=per_seed,
        completed_seeds=len(per_seed),
        failed_seeds=failed,
    )
    records.write_summary(method_name, task, result)
    records.close()
    return result


class _JsonlWriter:
    def __init__(self, path) -> None:
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def _emit(self, record: dict) -> None:
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def write_trial(self, method, task: Task, trial: TrialResult, record_type: str, wall_time=None) -> None:
        self._emit(
            {
                "record": record_type,
                "method": getattr(method, "name", "unknown"),
                "dataset": task.name,
                "metric": task.metric,
                "seed": trial.seed,
                "hyper_parameters": {
                    "learning_rate": trial.learning_rate,
                    "batch_size": trial.batch_size,
                },
                "dev_metric": trial.dev_metric,
                "test_metric": trial.test_metric,
                "best_step": trial.best_step,
                "wall_time": wall_time,
            }
        )

    def write_failure(self, task: Task, seed: int) -> None:
        self._emit({"record": "seed_failure", "dataset": task.name, "seed": seed})

    def write_summary(self, method_name: str, task: Task, result: ProtocolResult) -> None:
        self._emit(
            {
                "record": "summary",
                "method": method_name,
                "dataset": task.name,
                "metric": task.metric,
                "mean": result.mean,
                "std": result.std,
                "completed_seeds": result.completed_seeds,
                "failed_seeds": result.failed_seeds,
            }
        )

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
