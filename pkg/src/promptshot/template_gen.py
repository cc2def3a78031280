"""Template generation via a span-infilling generator.

Each training example is converted into a generator input that surrounds
its label word with the two span markers ``<X>`` and ``<Y>``.  Beam search
decodes marker-delimited span fillers, scoring every hypothesis by the
summed token log-probability across all training examples, and the decoded
spans are folded back into the template DSL around a mask slot.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datasets import Task
from .errors import DegenerateTemplate, FormMismatch, NoUsableTemplate, UnknownLabel
from .schema import (
    MASK_TOKEN,
    SLOT1_TOKEN,
    SLOT2_TOKEN,
    LabeledExample,
    Prompt,
    Template,
    Verbalizer,
    parse_template,
)
from .training import evaluate_prompt, finetune_prompt

log = logging.getLogger(__name__)

SPAN_OPEN = "<X>"
SPAN_CLOSE = "<Y>"

FORMS = ("before_single", "after_single", "between_pair")


class EmptyTrainSetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GenerationInput:
    form: str
    text: str

    def __post_init__(self) -> None:
        if self.form not in FORMS:
            raise ValueError(f"unknown conversion form {self.form!r}")
        if self.text.count(SPAN_OPEN) != 1 or self.text.count(SPAN_CLOSE) != 1:
            raise ValueError("generator input needs exactly one <X> and one <Y>")


@dataclass
class TemplateCandidate:
    template: Template
    generation_score: float
    form: str
    dev_accuracy: Optional[float] = None


def build_generation_input(
    example: LabeledExample, verbalizer: Verbalizer, form: str
) -> GenerationInput:
    """Wrap the example's label word in span markers per the chosen form."""
    if not isinstance(example.label, str):
        raise UnknownLabel(f"example {example.id!r} has a non-categorical label")
    word = verbalizer.word(example.label)
    if form == "between_pair":
        if example.sentence2 is None:
            raise FormMismatch("between_pair needs a sentence pair")
        text = f"{example.sentence1} {SPAN_OPEN} {word} {SPAN_CLOSE} {example.sentence2}"
    elif form in ("before_single", "after_single"):
        if example.sentence2 is not None:
            raise FormMismatch("single-sentence forms do not apply to pair examples")
        if form == "before_single":
            text = f"{SPAN_OPEN} {word} {SPAN_CLOSE} {example.sentence1}"
        else:
            text = f"{example.sentence1} {SPAN_OPEN} {word} {SPAN_CLOSE}"
    else:
        raise ValueError(f"unknown conversion form {form!r}")
    return GenerationInput(form, text)


def template_log_prob(
    tokens: Sequence[str],
    train_examples: list[LabeledExample],
    verbalizer: Verbalizer,
    form: str,
    generator,
) -> float:
    """Summed decoding objective of a candidate token sequence.

    For every training example and every position, add the log-probability
    of the token given the preceding tokens and that example's conversion
    input.  An empty training set scores 0 with a warning.
    """
    if not tokens:
        raise ValueError("candidate token sequence is empty")
    if not train_examples:
        warnings.warn("scoring against an empty training set", EmptyTrainSetWarning)
        return 0.0
    conditionings = [
        build_generation_input(ex, verbalizer, form).text for ex in train_examples
    ]
    score = 0.0
    for j, token in enumerate(tokens):
        prefix = tuple(tokens[:j])
        for cond in conditionings:
            score += generator.token_log_prob(prefix, token, cond)
    return score


@dataclass(frozen=True)
class DecodedSequence:
    tokens: tuple[str, ...]
    score: float


def beam_search_templates(
    train_examples: list[LabeledExample],
    verbalizer: Verbalizer,
    generator,
    form: str,
    beam_width: int = 100,
    max_len: int = 20,
) -> list[DecodedSequence]:
    """Beam-search decode span-filler sequences, best score first.

    Hypothesis scores are the full training-set sum at every step.  A
    hypothesis finishes on the generator's end-of-sequence token (not kept
    in the output) or at the length cap.
    """
    if beam_width < 1:
        raise ValueError("beam width must be at least 1")
    conditionings = [
        build_generation_input(ex, verbalizer, form).text for ex in train_examples
    ]
    eos = generator.eos_token
    token_rank = {w: i for i, w in enumerate(generator.vocab)}

    def step_scores(prefix: tuple[str, ...]) -> dict[str, float]:
        out = {}
        for token in generator.vocab:
            total = 0.0
            for cond in conditionings:
                total += generator.token_log_prob(prefix, token, cond)
            out[token] = total
        return out

    active: list[tuple[tuple[str, ...], float]] = [((), 0.0)]
    finished: list[DecodedSequence] = []
    for _ in range(max_len):
        if not active:
            break
        expansions: list[tuple[float, tuple[int, ...], tuple[str, ...], str]] = []
        for prefix, score in active:
            for token, delta in step_scores(prefix).items():
                ids = tuple(token_rank[t] for t in prefix) + (token_rank[token],)
                expansions.append((score + delta, ids, prefix, token))
        expansions.sort(key=lambda e: (-e[0], e[1]))
        active = []
        for score, _, prefix, token in expansions[:beam_width]:
            if token == eos:
                if prefix:
                    finished.append(DecodedSequence(prefix, score))
            else:
                active.append((prefix + (token,), score))
    for prefix, score in active:
        finished.append(DecodedSequence(prefix, score))
    finished.sort(key=lambda d: (-d.score, tuple(token_rank[t] for t in d.tokens)))
    return finished[:beam_width]


def split_decoded_spans(tokens: Sequence[str]) -> Optional[tuple[str, str]]:
    """Extract the <X> and <Y> span texts from a decoded sequence.

    Returns None when the markers are missing or out of order.
    """
    tokens = list(tokens)
    if SPAN_OPEN not in tokens or SPAN_CLOSE not in tokens:
        return None
    open_idx = tokens.index(SPAN_OPEN)
    close_idx = tokens.index(SPAN_CLOSE)
    if open_idx != 0 or close_idx < open_idx:
        return None
    span_x = " ".join(tokens[open_idx + 1 : close_idx])
    span_y = " ".join(tokens[close_idx + 1 :])
    return span_x, span_y


_FORBIDDEN_IN_SPANS = (SLOT1_TOKEN, SLOT2_TOKEN, MASK_TOKEN, SPAN_OPEN, SPAN_CLOSE)


def finalize_template(span_x: str, span_y: str, form: str) -> Template:
    """Fold decoded spans back into a DSL template around the mask slot."""
    span_x = span_x.strip()
    span_y = span_y.strip()
    if not span_x and not span_y:
        raise DegenerateTemplate("both spans are empty")
    for span in (span_x, span_y):
        if any(marker in span for marker in _FORBIDDEN_IN_SPANS):
            raise DegenerateTemplate(f"span {span!r} contains a reserved marker")
    if form == "before_single":
        pieces = [span_x, MASK_TOKEN, span_y, SLOT1_TOKEN]
    elif form == "after_single":
        pieces = [SLOT1_TOKEN, span_x, MASK_TOKEN, span_y]
    elif form == "between_pair":
        pieces = [SLOT1_TOKEN, span_x, MASK_TOKEN, span_y, SLOT2_TOKEN]
    else:
        raise ValueError(f"unknown conversion form {form!r}")
    text = " ".join(p for p in pieces if p)
    return parse_template(text)


def generate_template_candidates(
    train_examples: list[LabeledExample],
    verbalizer: Verbalizer,
    generator,
    task: Task,
    beam_width: int = 100,
    max_len: int = 20,
) -> list[TemplateCandidate]:
    """Decode, finalize, and de-duplicate template candidates.

    Single-sentence tasks use both the before and after placements; pair
    tasks place the label word between the sentences.  Undecodable or
    degenerate outputs are dropped.
    """
    forms = ("between_pair",) if task.is_pair else ("before_single", "after_single")
    candidates: list[TemplateCandidate] = []
    seen: set[str] = set()
    for form in forms:
        for decoded in beam_search_templates(
            train_examples, verbalizer, generator, form, beam_width, max_len
        ):
            spans = split_decoded_spans(decoded.tokens)
            if spans is None:
                continue
            try:
                template = finalize_template(spans[0], spans[1], form)
            except DegenerateTemplate:
                continue
            key = template.serialize()
            if key in seen:
                continue
            seen.add(key)
            candidates.append(TemplateCandidate(template, decoded.score, form))
    candidates.sort(key=lambda c: (-c.generation_score, c.template.serialize()))
    return candidates


def select_templates(
    candidates: list[TemplateCandidate],
    verbalizer: Verbalizer,
    task: Task,
    train_examples: list[LabeledExample],
    dev_examples: list[LabeledExample],
    backend,
    mode: str = "best_one",
    top_k: int = 1,
    *,
    steps: int = 250,
    batch_size: int = 8,
    learning_rate: float = 1e-5,
    seed: int = 0,
) -> list[TemplateCandidate]:
    """Fine-tune each candidate and keep the dev winner(s).

    ``best_one`` returns the single argmax, ``top_k_ensemble`` the k best;
    ties keep the earlier candidate.  Candidates that fail training are
    dropped; if all fail, NoUsableTemplate.
    """
    if not candidates:
        raise ValueError("no template candidates to select from")
    if mode not in ("best_one", "top_k_ensemble"):
        raise ValueError(f"unknown selection mode {mode!r}")
    scored: list[tuple[int, TemplateCandidate]] = []
    for rank, candidate in enumerate(candidates):
        prompt = Prompt(candidate.template, verbalizer)
        clone = backend.clone()
        try:
            finetune_prompt(
                clone,
                prompt,
                task,
                train_examples,
                steps=steps,
                batch_size=batch_size,
                learning_rate=learning_rate,
                rng=np.random.default_rng(seed),
            )
            candidate.dev_accuracy = evaluate_prompt(clone, prompt, task, dev_examples)
        except Exception:
            log.exception("template candidate %d failed fine-tuning; dropped", rank)
            continue
        scored.append((rank, candidate))
    if not scored:
        raise NoUsableTemplate("every template candidate failed training")
    scored.sort(key=lambda item: (-item[1].dev_accuracy, item[0]))
    keep = 1 if mode == "best_one" else top_k
    return [c for _, c in scored[:keep]]


# --- audit file: rank, score, serialized template ---

def save_template_candidates(path, candidates: list[TemplateCandidate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rank, cand in enumerate(candidates):
            fh.write(f"{rank}\t{cand.generation_score:.6f}\t{cand.template.serialize()}\n")


def load_template_candidates(path) -> list[TemplateCandidate]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            _, score, text = line.rstrip("\n").split("\t")
            out.append(TemplateCandidate(parse_template(text), float(score), form="unknown"))
    return out
