"""Demonstration-augmented contexts.

A demonstration set holds one filled example per class.  Candidate pools
can be restricted to the training instances most similar to the query
(cosine over sentence embeddings); contexts concatenate the masked query
with the filled demonstrations under a token budget, and inference
ensembles several sampled sets by averaging class log-probabilities.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .backend import cosine
from .errors import EmptyClassPool, InputTooLong
from .inference import ClassDistribution, log_class_probabilities
from .schema import LabeledExample, Prompt, render, render_filled

log = logging.getLogger(__name__)

_CLAMP = 1e-12


@dataclass(frozen=True)
class DemoConfig:
    similarity_fraction: float = 0.5   # top fraction of each class eligible
    num_sets: int = 16                 # demonstration sets ensembled per query
    sampling_mode: str = "uniform"     # "uniform" | "selective"
    segment_strategy: str = "one_seg"  # "one_seg" | "two_seg" | "n_seg"

    def __post_init__(self) -> None:
        if not 0.0 < self.similarity_fraction <= 1.0:
            raise ValueError("similarity fraction must lie in (0, 1]")
        if self.num_sets < 1:
            raise ValueError("need at least one demonstration set")
        if self.sampling_mode not in ("uniform", "selective"):
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        if self.segment_strategy not in ("one_seg", "two_seg", "n_seg"):
            raise ValueError(f"unknown segment strategy {self.segment_strategy!r}")


@dataclass(frozen=True)
class DemonstrationSet:
    """One example per class, in ascending label order."""

    members: tuple[tuple[str, LabeledExample], ...]

    def __post_init__(self) -> None:
        labels = [l for l, _ in self.members]
        if len(set(labels)) != len(labels):
            raise ValueError("demonstration set repeats a class")


def class_pools(
    query: LabeledExample,
    train_examples: list[LabeledExample],
    labels: tuple[str, ...],
) -> dict[str, list[LabeledExample]]:
    """Full per-class pools with the query itself excluded."""
    pools: dict[str, list[LabeledExample]] = {l: [] for l in labels}
    for ex in train_examples:
        if ex.id == query.id:
            continue
        if ex.label in pools:
            pools[str(ex.label)].append(ex)
    for label, pool in pools.items():
        if not pool:
            raise EmptyClassPool(f"no eligible instances for class {label!r}")
    return pools


def build_pools(
    query: LabeledExample,
    train_examples: list[LabeledExample],
    embeddings: dict[str, np.ndarray],
    similarity_fraction: float,
    labels: tuple[str, ...],
) -> dict[str, list[LabeledExample]]:
    """Similarity-filtered pools: the top fraction of each class by cosine
    to the query, query excluded.  Pool sizes round up so tiny classes
    never empty out."""
    full = class_pools(query, train_examples, labels)
    query_emb = embeddings[query.id]
    filtered = {}
    for label, pool in full.items():
        scored = sorted(
            enumerate(pool),
            key=lambda item: (-cosine(query_emb, embeddings[item[1].id]), item[0]),
        )
        keep = math.ceil(similarity_fraction * len(pool))
        filtered[label] = [ex for _, ex in scored[:keep]]
    return filtered


def sample_demo_set(pools: dict[str, list[LabeledExample]], rng: np.random.Generator) -> DemonstrationSet:
    """Independent uniform draw from each class pool, ascending label order."""
    members = []
    for label in sorted(pools):
        pool = pools[label]
        if not pool:
            raise EmptyClassPool(f"no eligible instances for class {label!r}")
        members.append((label, pool[int(rng.integers(len(pool)))]))
    return DemonstrationSet(tuple(members))


def build_context(
    query: LabeledExample,
    demo_set: DemonstrationSet | None,
    prompt: Prompt,
    backend,
    max_len: int | None = None,
) -> str:
    """Masked query followed by the filled demonstrations.

    When the tokenized context exceeds the budget, demonstrations are
    dropped whole, last class first.
    """
    if max_len is None:
        max_len = backend.capabilities.max_input_length
    query_text = render(prompt.template, query)
    if len(backend.tokenize(query_text)) > max_len:
        raise InputTooLong("query alone exceeds the context budget")
    demo_texts = []
    if demo_set is not None:
        demo_texts = [
            render_filled(prompt.template, ex, prompt.verbalizer) for _, ex in demo_set.members
        ]
    kept = len(demo_texts)
    while kept > 0:
        context = " ".join([query_text] + demo_texts[:kept])
        if len(backend.tokenize(context)) <= max_len:
            if kept < len(demo_texts):
                log.warning("truncated %d demonstration(s) for query %s", len(demo_texts) - kept, query.id)
            return context
        kept -= 1
    if demo_texts:
        log.warning("truncated all demonstrations for query %s", query.id)
    return query_text


def assign_segments(
    strategy: str,
    num_classes: int,
    sentences_per_example: int,
    capabilities,
) -> list[int]:
    """Segment id per sentence unit, query sentences first.

    one_seg uses a single id; two_seg separates query from demonstrations;
    n_seg gives every sentence position its own id (e.g. a 3-class pair
    task needs 8 ids), which requires a backend that can grow its segment
    table.
    """
    units = (1 + num_classes) * sentences_per_example
    if strategy == "one_seg":
        ids = [0] * units
    elif strategy == "two_seg":
        ids = [0] * sentences_per_example + [1] * (num_classes * sentences_per_example)
    elif strategy == "n_seg":
        ids = list(range(units))
    else:
        raise ValueError(f"unknown segment strategy {strategy!r}")
    if not capabilities.supports_segments:
        from .errors import CapabilityError

        raise CapabilityError("backend has no segment embeddings")
    needed = max(ids) + 1
    if needed > capabilities.num_pretrained_segments and not capabilities.extendable_segments:
        from .errors import CapabilityError

        raise CapabilityError(
            f"strategy {strategy!r} needs {needed} segment ids, backend has "
            f"{capabilities.num_pretrained_segments} and cannot grow"
        )
    return ids


def ensemble_predict(
    query: LabeledExample,
    pools: dict[str, list[LabeledExample]],
    prompt: Prompt,
    backend,
    num_sets: int,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> ClassDistribution:
    """Average class log-probabilities over sampled demonstration sets."""
    if num_sets < 1:
        raise ValueError("need at least one demonstration set")
    labels = prompt.verbalizer.labels
    totals = np.zeros(len(labels))
    for _ in range(num_sets):
        demo_set = sample_demo_set(pools, rng)
        context = build_context(query, demo_set, prompt, backend, max_len)
        logp = log_class_probabilities(backend.mask_logits(context), prompt.verbalizer, backend)
        totals += np.array([logp[l] for l in labels])
    mean = totals / num_sets
    mean = mean - mean.max()
    p = np.exp(mean)
    p /= p.sum()
    return ClassDistribution(labels, tuple(p.tolist()))
