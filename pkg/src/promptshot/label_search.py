"""Automatic verbalizer construction.

Per class, the vocabulary is pruned to the words the untrained model most
expects at the mask position (summed conditional log-likelihood over the
class's training examples).  Assignments over the pruned sets are then
enumerated and ranked by zero-shot training accuracy, and the survivors
are fine-tuned and re-ranked on the development set.  A nearest-neighbor
variant re-orders an oversized pruned set around manual anchor words.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .backend import cosine
from .datasets import Task
from .errors import NoValidAssignment
from .inference import class_probabilities
from .schema import LabeledExample, Prompt, Template, Verbalizer, render
from .training import evaluate_prompt, finetune_prompt

log = logging.getLogger(__name__)

ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class SearchConfig:
    pruned_size: int = 100            # words kept per class
    num_assignments: int = 100        # assignments fine-tuned for re-ranking
    batch_size: int = 8
    learning_rate: float = 1e-5
    steps: int = 250
    neighbor_count: Optional[int] = None      # nearest-neighbor re-rank size
    anchor_words: Optional[dict[str, str]] = None

    def __post_init__(self) -> None:
        if self.pruned_size < 1 or self.num_assignments < 1:
            raise ValueError("pruned size and assignment count must be positive")


@dataclass
class VerbalizerCandidate:
    assignment: dict[str, str]
    zero_shot_train_accuracy: float
    dev_accuracy: Optional[float] = None

    def verbalizer(self) -> Verbalizer:
        return Verbalizer(dict(self.assignment))


def prune_vocab(
    class_examples: list[LabeledExample],
    template: Template,
    backend,
    k: int,
) -> list[str]:
    """Top-k vocabulary words by summed mask log-likelihood over the class.

    Descending score; ties broken by ascending token id.  ``k`` larger than
    the vocabulary is clamped with a warning.
    """
    if not class_examples:
        raise ValueError("need at least one class example to prune against")
    vocab_size = backend.capabilities.vocab_size
    if k > vocab_size:
        log.warning("pruned size %d exceeds vocabulary size %d; clamping", k, vocab_size)
        k = vocab_size
    totals = np.zeros(vocab_size)
    for example in class_examples:
        logits = backend.mask_logits(render(template, example))
        totals += logits - _logsumexp(logits)
    order = sorted(range(vocab_size), key=lambda i: (-totals[i], i))
    return [backend.vocab[i] for i in order[:k]]


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    return m + math.log(np.exp(x - m).sum())


def _zero_shot_accuracy(
    assignment: dict[str, str],
    train_examples: list[LabeledExample],
    template: Template,
    backend,
    rendered_logits: list[np.ndarray],
) -> float:
    verbalizer = Verbalizer(assignment)
    correct = 0
    for example, logits in zip(train_examples, rendered_logits):
        dist = class_probabilities(logits, verbalizer, backend)
        if dist.argmax() == str(example.label):
            correct += 1
    return correct / len(train_examples)


def enumerate_assignments(
    pruned_sets: dict[str, list[str]],
    train_examples: list[LabeledExample],
    template: Template,
    backend,
    n: int,
) -> list[VerbalizerCandidate]:
    """Top-n duplicate-free assignments by zero-shot training accuracy.

    Scoring uses the backend as-is (no parameter updates).  Ties are broken
    by the lexicographic token-id order of the assignment.  The Cartesian
    product is capped; oversized products fall back to per-class prefixes
    of the pruned lists.
    """
    labels = sorted(pruned_sets)
    if any(not pruned_sets[l] for l in labels):
        raise ValueError("all pruned sets must be non-empty")
    sets = [list(pruned_sets[l]) for l in labels]
    product_size = math.prod(len(s) for s in sets)
    while product_size > ENUMERATION_CAP:
        widest = max(range(len(sets)), key=lambda i: len(sets[i]))
        sets[widest] = sets[widest][: len(sets[widest]) - 1]
        product_size = math.prod(len(s) for s in sets)
    if product_size < math.prod(len(pruned_sets[l]) for l in labels):
        log.warning("assignment product capped at %d; truncated pruned lists in use", product_size)

    rendered_logits = [backend.mask_logits(render(template, ex)) for ex in train_examples]
    scored: list[tuple[float, tuple[int, ...], dict[str, str]]] = []
    for words in itertools.product(*sets):
        if len(set(words)) != len(words):
            continue
        assignment = dict(zip(labels, words))
        accuracy = _zero_shot_accuracy(assignment, train_examples, template, backend, rendered_logits)
        token_ids = tuple(backend.token_id(" " + w) for w in words)
        scored.append((accuracy, token_ids, assignment))
    if not scored:
        raise NoValidAssignment("every assignment maps two classes to the same word")
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        VerbalizerCandidate(assignment=a, zero_shot_train_accuracy=acc)
        for acc, _, a in scored[:n]
    ]


def rerank_assignments(
    candidates: list[VerbalizerCandidate],
    template: Template,
    task: Task,
    train_examples: list[LabeledExample],
    dev_examples: list[LabeledExample],
    backend,
    config: SearchConfig,
    seed: int = 0,
) -> VerbalizerCandidate:
    """Fine-tune every candidate from the same initial state and pick the
    one with the best dev metric (ties keep the earlier enumeration rank).
    Candidates whose training fails are skipped, not fatal."""
    if not candidates:
        raise ValueError("no candidates to re-rank")
    best: Optional[VerbalizerCandidate] = None
    for rank, candidate in enumerate(candidates):
        prompt = Prompt(template, candidate.verbalizer())
        clone = backend.clone()
        try:
            finetune_prompt(
                clone,
                prompt,
                task,
                train_examples,
                steps=config.steps,
                batch_size=config.batch_size,
                learning_rate=config.learning_rate,
                rng=np.random.default_rng(seed),
            )
            dev_metric = evaluate_prompt(clone, prompt, task, dev_examples)
        except Exception:
            log.exception("candidate %d failed fine-tuning; skipped", rank)
            continue
        candidate.dev_accuracy = dev_metric
        if best is None or dev_metric > best.dev_accuracy:
            best = candidate
    if best is None:
        raise NoValidAssignment("every candidate failed fine-tuning")
    return best


def neighbor_rerank(
    words: list[str],
    anchor_word: str,
    encoder,
    m: int,
) -> list[str]:
    """The m words closest (cosine) to the class's manual anchor word.

    Words are embedded as one-word sentences; ties keep the original
    pruning order.  ``m`` larger than the list returns everything.
    """
    anchor = encoder.sentence_embedding(anchor_word)
    scored = sorted(
        enumerate(words),
        key=lambda item: (-cosine(anchor, encoder.sentence_embedding(item[1])), item[0]),
    )
    return [w for _, w in scored[:m]]


def search_label_words(
    template: Template,
    task: Task,
    train_examples: list[LabeledExample],
    dev_examples: list[LabeledExample],
    backend,
    config: SearchConfig,
    encoder=None,
    seed: int = 0,
) -> tuple[VerbalizerCandidate, list[VerbalizerCandidate]]:
    """Full pipeline: prune, optional neighbor re-rank, enumerate, re-rank.

    Returns the winner and the scored candidate list (enumeration order).
    """
    pruned: dict[str, list[str]] = {}
    for label in task.labels:
        class_examples = [ex for ex in train_examples if str(ex.label) == label]
        words = prune_vocab(class_examples, template, backend, config.pruned_size)
        if config.neighbor_count is not None:
            if encoder is None or not config.anchor_words:
                raise ValueError("neighbor re-ranking needs an encoder and anchor words")
            words = neighbor_rerank(words, config.anchor_words[label], encoder, config.neighbor_count)
        pruned[label] = words
    candidates = enumerate_assignments(
        pruned, train_examples, template, backend, config.num_assignments
    )
    best = rerank_assignments(
        candidates, template, task, train_examples, dev_examples, backend, config, seed
    )
    return best, candidates


# --- audit file: one candidate per line ---

def save_candidates(path, candidates: list[VerbalizerCandidate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            mapping = ",".join(f"{l}:{w}" for l, w in sorted(cand.assignment.items()))
            dev = "" if cand.dev_accuracy is None else f"{cand.dev_accuracy:.6f}"
            fh.write(f"{mapping}\t{cand.zero_shot_train_accuracy:.6f}\t{dev}\n")


def load_candidates(path) -> list[VerbalizerCandidate]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            mapping_text, zero_shot, dev = line.rstrip("\n").split("\t")
            assignment = dict(entry.split(":", 1) for entry in mapping_text.split(","))
            out.append(
                VerbalizerCandidate(
                    assignment=assignment,
                    zero_shot_train_accuracy=float(zero_shot),
                    dev_accuracy=float(dev) if dev else None,
                )
            )
    return out
