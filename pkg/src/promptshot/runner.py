"""Method orchestration: the four baselines, template ensembles, and the
prompt-source pipelines (manual / auto templates / auto label words).
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .datasets import Task
from .demos import DemoConfig
from .errors import InputTooLong, NoUsableTemplate
from .inference import BaselineHead, baseline_head_forward, class_probabilities, regression_predict
from .label_search import SearchConfig, save_candidates, search_label_words
from .metrics import compute_metric
from .protocol import FewShotSplit, GridPoint, PromptMethod, TrialResult
from .schema import LabeledExample, Prompt, Template, Verbalizer, render, render_filled
from .template_gen import (
    generate_template_candidates,
    save_template_candidates,
    select_templates,
)
from .training import evaluate_prompt, finetune_prompt, loss_spec_for

log = logging.getLogger(__name__)

_CLAMP = 1e-12


@dataclass(frozen=True)
class BaselineSpec:
    kind: str  # majority | zero_shot | in_context | head_finetune
    num_random_demos: int = 32

    def __post_init__(self) -> None:
        if self.kind not in ("majority", "zero_shot", "in_context", "head_finetune"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")


def _gold(task: Task, example: LabeledExample):
    return float(example.label) if task.is_regression else str(example.label)


def majority_label(train_examples: list[LabeledExample]) -> str:
    counts = Counter(str(ex.label) for ex in train_examples)
    top = max(counts.values())
    return min(l for l, c in counts.items() if c == top)


def _in_context_text(
    query: LabeledExample,
    prompt: Prompt,
    demos: list[LabeledExample],
    backend,
) -> str:
    """Masked query plus randomly drawn filled demonstrations, truncated
    whole to the backend context like the per-class demonstration path."""
    budget = backend.capabilities.max_input_length
    query_text = render(prompt.template, query)
    if len(backend.tokenize(query_text)) > budget:
        raise InputTooLong("query alone exceeds the context budget")
    demo_texts = [render_filled(prompt.template, d, prompt.verbalizer) for d in demos]
    kept = len(demo_texts)
    while kept > 0:
        text = " ".join([query_text] + demo_texts[:kept])
        if len(backend.tokenize(text)) <= budget:
            return text
        kept -= 1
    return query_text


def run_baseline(
    spec: BaselineSpec,
    split: FewShotSplit,
    prompt: Optional[Prompt],
    backend,
    task: Task,
    test_examples: list[LabeledExample],
    seed: int = 0,
) -> float:
    """Test metric of one baseline on one split.

    majority: constant most-frequent-training-class prediction.
    zero_shot: cloze prediction with the backend as-is.
    in_context: zero_shot plus random demonstrations, no parameter updates.
    head_finetune: use HeadMethod with the grid protocol instead.
    """
    golds = [_gold(task, ex) for ex in test_examples]
    if spec.kind == "majority":
        label = majority_label(list(split.train))
        preds = [label] * len(test_examples)
        return compute_metric(preds, golds, task.metric, task.positive_label)
    if prompt is None:
        raise ValueError(f"baseline {spec.kind!r} needs a prompt")
    rng = np.random.default_rng(seed)
    preds = []
    for ex in test_examples:
        if spec.kind == "zero_shot":
            text = render(prompt.template, ex)
        elif spec.kind == "in_context":
            picks = rng.integers(len(split.train), size=spec.num_random_demos)
            demos = [split.train[int(i)] for i in picks]
            text = _in_context_text(ex, prompt, demos, backend)
        else:
            raise ValueError("head_finetune runs through HeadMethod and grid_search")
        logits = backend.mask_logits(text)
        dist = class_probabilities(logits, prompt.verbalizer, backend)
        if task.is_regression:
            preds.append(regression_predict(dist.prob(task.regression.y_upper), task.regression))
        else:
            preds.append(dist.argmax())
    return compute_metric(preds, golds, task.metric, task.positive_label)


class HeadMethod:
    """Standard fine-tuning baseline: a fresh task head over the backend's
    sentence features, trained by gradient descent under the same grid and
    early-stopping protocol as prompt-based methods."""

    name = "head_ft"

    def __init__(self, backend, task: Task, head_seed: int = 0) -> None:
        self.backend = backend
        self.task = task
        self.head_seed = head_seed

    def _input_text(self, example: LabeledExample) -> str:
        if example.sentence2 is not None:
            return f"{example.sentence1} {example.sentence2}"
        return example.sentence1

    def _new_head(self) -> BaselineHead:
        dim = self.backend.feature_dim
        if self.task.is_regression:
            return BaselineHead.for_regression(dim, seed=self.head_seed)
        return BaselineHead.for_classification(len(self.task.labels), dim, seed=self.head_seed)

    def _predict(self, head: BaselineHead, example: LabeledExample):
        h = self.backend.features(self._input_text(example))
        out = baseline_head_forward(h, head, None if self.task.is_regression else self.task.labels)
        return out if self.task.is_regression else out.argmax()

    def _evaluate(self, head: BaselineHead, examples: list[LabeledExample]) -> float:
        preds = [self._predict(head, ex) for ex in examples]
        golds = [_gold(self.task, ex) for ex in examples]
        return compute_metric(preds, golds, self.task.metric, self.task.positive_label)

    def run_trial(
        self,
        split: FewShotSplit,
        point: GridPoint,
        steps: int,
        eval_every: int,
        test_examples: list[LabeledExample],
        seed: int,
    ) -> TrialResult:
        head = self._new_head()
        rng = np.random.default_rng(seed)
        order = list(range(len(split.train)))
        cursor = len(order)
        best = None
        history = []
        for step in range(1, steps + 1):
            batch = []
            for _ in range(min(point.batch_size, len(order))):
                if cursor >= len(order):
                    rng.shuffle(order)
                    cursor = 0
                batch.append(split.train[order[cursor]])
                cursor += 1
            grad = np.zeros_like(head.weights)
            for ex in batch:
                h = self.backend.features(self._input_text(ex))
                if self.task.is_regression:
                    err = float(head.weights @ h) - float(ex.label)
                    grad += 2.0 * err * h
                else:
                    dist = baseline_head_forward(h, head, self.task.labels)
                    p = np.array(dist.probs)
                    p[self.task.labels.index(str(ex.label))] -= 1.0
                    grad += np.outer(p, h)
            head.weights = head.weights - point.learning_rate * grad / len(batch)
            if split.dev and eval_every and step % eval_every == 0:
                metric = self._evaluate(head, list(split.dev))
                history.append((step, metric))
                if best is None or metric > best[0]:
                    best = (metric, step, head.weights.copy())
        if best is not None:
            head.weights = best[2]
            dev_metric, best_step = best[0], best[1]
        else:
            dev_metric, best_step = float("nan"), steps
        return TrialResult(
            learning_rate=point.learning_rate,
            batch_size=point.batch_size,
            dev_metric=dev_metric,
            test_metric=self._evaluate(head, test_examples),
            best_step=best_step,
            seed=split.seed,
            dev_history=history,
        )


def run_ensemble(
    templates: list[Template],
    verbalizer: Verbalizer,
    task: Task,
    split: FewShotSplit,
    backend,
    test_examples: list[LabeledExample],
    *,
    steps: int = 250,
    batch_size: int = 8,
    learning_rate: float = 1e-5,
    seed: int = 0,
) -> float:
    """One fine-tuned model per template; per-example class log-probs are
    averaged across surviving members before the argmax."""
    if not templates:
        raise ValueError("ensemble needs at least one template")
    if task.is_regression:
        raise ValueError("template ensembling is defined for classification tasks")
    members = []
    for idx, template in enumerate(templates):
        prompt = Prompt(template, verbalizer)
        clone = backend.clone()
        try:
            finetune_prompt(
                clone,
                prompt,
                task,
                list(split.train),
                steps=steps,
                batch_size=batch_size,
                learning_rate=learning_rate,
                rng=np.random.default_rng(seed),
            )
        except Exception:
            log.exception("ensemble member %d failed training; dropped", idx)
            continue
        members.append((clone, prompt))
    if not members:
        raise NoUsableTemplate("every ensemble member failed training")
    labels = verbalizer.labels
    preds = []
    for ex in test_examples:
        totals = np.zeros(len(labels))
        for clone, prompt in members:
            dist = class_probabilities(
                clone.mask_logits(render(prompt.template, ex)), prompt.verbalizer, clone
            )
            totals += np.log(np.maximum(np.array(dist.probs), _CLAMP))
        preds.append(labels[int(np.argmax(totals / len(members)))])
    golds = [str(ex.label) for ex in test_examples]
    return compute_metric(preds, golds, task.metric, task.positive_label)


@dataclass
class PromptPipeline:
    """Builds the per-split prompt for a method and persists search artifacts.

    ``source`` is one of manual, auto_template, auto_label, auto_both; the
    combined pipeline starts from the manual label words, generates
    templates, then searches label words over the winning template.
    """

    source: str
    manual_prompt: Prompt
    backend: object
    task: Task
    generator: object = None
    encoder: object = None
    search_config: SearchConfig = None
    beam_width: int = 100
    max_span_len: int = 20
    artifact_dir: Optional[Path] = None
    demo_config: Optional[DemoConfig] = None
    eval_num_sets: Optional[int] = None

    def __post_init__(self) -> None:
        if self.source not in ("manual", "auto_template", "auto_label", "auto_both"):
            raise ValueError(f"unknown prompt source {self.source!r}")
        if self.search_config is None:
            self.search_config = SearchConfig()

    def _artifact(self, name: str, seed: int) -> Optional[Path]:
        if self.artifact_dir is None:
            return None
        self.artifact_dir.mkdir(parents=True, exist_ok=True)
        return self.artifact_dir / f"{name}_seed{seed}.tsv"

    def _auto_template(self, split: FewShotSplit, seed: int, verbalizer: Verbalizer) -> Template:
        if self.generator is None:
            raise ValueError("template generation needs a generator backend")
        candidates = generate_template_candidates(
            list(split.train), verbalizer, self.generator, self.task,
            beam_width=self.beam_width, max_len=self.max_span_len,
        )
        path = self._artifact("template_candidates", seed)
        if path is not None:
            save_template_candidates(path, candidates)
        chosen = select_templates(
            candidates, verbalizer, self.task, list(split.train), list(split.dev),
            self.backend,
            mode="best_one",
            steps=self.search_config.steps,
            batch_size=self.search_config.batch_size,
            learning_rate=self.search_config.learning_rate,
            seed=seed,
        )
        return chosen[0].template

    def _auto_label(self, split: FewShotSplit, seed: int, template: Template) -> Verbalizer:
        best, candidates = search_label_words(
            template, self.task, list(split.train), list(split.dev),
            self.backend, self.search_config, encoder=self.encoder, seed=seed,
        )
        path = self._artifact("label_candidates", seed)
        if path is not None:
            save_candidates(path, candidates)
        return best.verbalizer()

    def prompt_for(self, split: FewShotSplit, seed: int) -> Prompt:
        template = self.manual_prompt.template
        verbalizer = self.manual_prompt.verbalizer
        if self.source in ("auto_template", "auto_both"):
            template = self._auto_template(split, seed, verbalizer)
        if self.source in ("auto_label", "auto_both"):
            verbalizer = self._auto_label(split, seed, template)
        return Prompt(template, verbalizer)

    def method_factory(self):
        def factory(split: FewShotSplit, seed: int) -> PromptMethod:
            prompt = self.prompt_for(split, seed)
            method = PromptMethod(
                self.backend, prompt, self.task,
                demo_config=self.demo_config,
                encoder=self.encoder,
                eval_num_sets=self.eval_num_sets,
            )
            method.name = self.method_name()
            return method

        return factory

    def method_name(self) -> str:
        name = {"manual": "prompt_ft", "auto_template": "prompt_ft_auto_t",
                "auto_label": "prompt_ft_auto_l", "auto_both": "prompt_ft_auto_tl"}[self.source]
        if self.demo_config is not None:
            name += "_demo"
        return name
