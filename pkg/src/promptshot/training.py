"""Shared fine-tuning and evaluation loops over cloze prompts.

Used by the verbalizer search (candidate re-ranking), template selection,
the grid-search protocol, and the CLI baselines.  All randomness flows
through explicit numpy generators so runs are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backend import ClassificationTarget, RegressionTarget, LossSpec, embedding_input
from .datasets import Task
from .demos import DemoConfig, build_pools, class_pools, ensemble_predict, sample_demo_set, build_context
from .errors import CapabilityError
from .inference import class_probabilities, regression_predict
from .metrics import compute_metric
from .schema import LabeledExample, Prompt, render


def loss_spec_for(example: LabeledExample, prompt: Prompt, backend, task: Task) -> LossSpec:
    """Translate a gold label into the backend loss target."""
    verbalizer = prompt.verbalizer
    if task.is_regression:
        spec = task.regression
        lower_id = backend.token_id(" " + verbalizer.word(spec.y_lower))
        upper_id = backend.token_id(" " + verbalizer.word(spec.y_upper))
        weight = (float(example.label) - spec.v_lower) / (spec.v_upper - spec.v_lower)
        return RegressionTarget(lower_id, upper_id, weight)
    labels = verbalizer.labels
    ids = tuple(backend.token_id(" " + verbalizer.word(l)) for l in labels)
    return ClassificationTarget(ids, labels.index(str(example.label)))


class DemoSampler:
    """Builds per-query demonstration pools over a fixed training set."""

    def __init__(
        self,
        train_examples: list[LabeledExample],
        task: Task,
        config: DemoConfig,
        encoder=None,
    ) -> None:
        if task.is_regression:
            raise CapabilityError("demonstrations are only supported for classification tasks")
        self.train_examples = train_examples
        self.task = task
        self.config = config
        self.encoder = encoder
        self._pool_cache: dict[str, dict[str, list[LabeledExample]]] = {}
        self._embeddings: Optional[dict[str, np.ndarray]] = None
        if config.sampling_mode == "selective":
            if encoder is None:
                raise ValueError("selective sampling needs a sentence encoder")
            self._embeddings = {
                ex.id: encoder.sentence_embedding(embedding_input(ex)) for ex in train_examples
            }

    def _embed_query(self, query: LabeledExample) -> np.ndarray:
        assert self._embeddings is not None
        cached = self._embeddings.get(query.id)
        if cached is not None:
            return cached
        return self.encoder.sentence_embedding(embedding_input(query))

    def pools_for(self, query: LabeledExample) -> dict[str, list[LabeledExample]]:
        pools = self._pool_cache.get(query.id)
        if pools is not None:
            return pools
        if self.config.sampling_mode == "selective":
            embeddings = dict(self._embeddings)
            embeddings[query.id] = self._embed_query(query)
            pools = build_pools(
                query,
                self.train_examples,
                embeddings,
                self.config.similarity_fraction,
                self.task.labels,
            )
        else:
            pools = class_pools(query, self.train_examples, self.task.labels)
        self._pool_cache[query.id] = pools
        return pools

    def training_context(self, query: LabeledExample, prompt: Prompt, backend, rng) -> str:
        demo_set = sample_demo_set(self.pools_for(query), rng)
        return build_context(query, demo_set, prompt, backend)

    def predict(self, query: LabeledExample, prompt: Prompt, backend, rng, num_sets=None):
        return ensemble_predict(
            query,
            self.pools_for(query),
            prompt,
            backend,
            num_sets or self.config.num_sets,
            rng,
        )


def predict_one(
    backend,
    prompt: Prompt,
    task: Task,
    example: LabeledExample,
    demo_sampler: Optional[DemoSampler] = None,
    rng: Optional[np.random.Generator] = None,
    num_sets: Optional[int] = None,
):
    """Predicted label (classification) or real value (regression)."""
    if demo_sampler is not None:
        dist = demo_sampler.predict(example, prompt, backend, rng, num_sets)
        return dist.argmax()
    logits = backend.mask_logits(render(prompt.template, example))
    if task.is_regression:
        dist = class_probabilities(logits, prompt.verbalizer, backend)
        p_upper = dist.prob(task.regression.y_upper)
        return regression_predict(p_upper, task.regression)
    return class_probabilities(logits, prompt.verbalizer, backend).argmax()


def evaluate_prompt(
    backend,
    prompt: Prompt,
    task: Task,
    examples: list[LabeledExample],
    demo_sampler: Optional[DemoSampler] = None,
    rng: Optional[np.random.Generator] = None,
    num_sets: Optional[int] = None,
) -> float:
    preds = [
        predict_one(backend, prompt, task, ex, demo_sampler, rng, num_sets) for ex in examples
    ]
    golds = [float(ex.label) if task.is_regression else str(ex.label) for ex in examples]
    return compute_metric(preds, golds, task.metric, task.positive_label)


@dataclass
class FinetuneResult:
    final_loss: float
    best_step: int = 0
    best_dev_metric: Optional[float] = None
    dev_history: list[tuple[int, float]] = field(default_factory=list)


def finetune_prompt(
    backend,
    prompt: Prompt,
    task: Task,
    train_examples: list[LabeledExample],
    *,
    steps: int,
    batch_size: int,
    learning_rate: float,
    rng: np.random.Generator,
    demo_sampler: Optional[DemoSampler] = None,
    dev_examples: Optional[list[LabeledExample]] = None,
    eval_every: Optional[int] = None,
    eval_num_sets: Optional[int] = None,
) -> FinetuneResult:
    """Fixed-step gradient-descent fine-tuning with optional early stopping.

    With a dev set and an eval interval, the dev metric is checked at each
    interval and the backend is restored to the best-scoring checkpoint at
    the end (ties keep the earliest).  Training-time demonstration sets are
    re-sampled per query per step from the same training examples.
    """
    order = list(range(len(train_examples)))
    cursor = len(order)  # trigger an initial shuffle
    loss = math.nan
    best: Optional[tuple[float, int, object]] = None
    history: list[tuple[int, float]] = []
    for step in range(1, steps + 1):
        batch = []
        for _ in range(min(batch_size, len(order))):
            if cursor >= len(order):
                rng.shuffle(order)
                cursor = 0
            query = train_examples[order[cursor]]
            cursor += 1
            if demo_sampler is not None:
                text = demo_sampler.training_context(query, prompt, backend, rng)
            else:
                text = render(prompt.template, query)
            batch.append((text, loss_spec_for(query, prompt, backend, task)))
        loss = backend.train_step(batch, learning_rate)
        if dev_examples is not None and eval_every and step % eval_every == 0:
            metric = evaluate_prompt(
                backend, prompt, task, dev_examples, demo_sampler,
                np.random.default_rng(rng.integers(2**32)), eval_num_sets,
            )
            history.append((step, metric))
            if best is None or metric > best[0]:
                best = (metric, step, backend.get_params())
    result = FinetuneResult(final_loss=loss, dev_history=history)
    if best is not None:
        backend.set_params(best[2])
        result.best_dev_metric = best[0]
        result.best_step = best[1]
    return result
