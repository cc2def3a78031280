"""Template DSL, verbalizers, and deterministic prompt rendering.

A template is plain text over three placeholder tokens (``<S1>``, ``<S2>``,
``[MASK]``); everything else is literal text that carries its own spacing.
Rendering applies four conventions so the result looks like natural text to
a masked language model:

(a) a sentence not at the start of the input is preceded by a single space;
(b) the first letter of a sentence is lowercased when it follows a literal;
(c) when a literal starting with punctuation directly follows a sentence
    slot, the sentence's own trailing punctuation character is dropped;
(d) the word filling the mask is separated from the preceding text by a
    single space.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import MalformedTemplate, SlotUnfilled, UnknownLabel

MASK_TOKEN = "[MASK]"
SLOT1_TOKEN = "<S1>"
SLOT2_TOKEN = "<S2>"

_PUNCTUATION = ".,!?;:"
_MARKER_RE = re.compile(r"(<S1>|<S2>|\[MASK\])")


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class SentenceSlot:
    index: int  # 1 or 2


@dataclass(frozen=True)
class MaskSlot:
    pass


Part = Union[Literal, SentenceSlot, MaskSlot]


@dataclass(frozen=True)
class Template:
    """Ordered sequence of literals, sentence slots, and one mask slot."""

    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        masks = sum(isinstance(p, MaskSlot) for p in self.parts)
        if masks != 1:
            raise MalformedTemplate(f"template must contain exactly one {MASK_TOKEN}, found {masks}")
        slots = {p.index for p in self.parts if isinstance(p, SentenceSlot)}
        if 2 in slots and 1 not in slots:
            raise MalformedTemplate(f"{SLOT2_TOKEN} used without {SLOT1_TOKEN}")
        for s in slots:
            if s not in (1, 2):
                raise MalformedTemplate(f"unsupported sentence slot index {s}")

    @property
    def num_slots(self) -> int:
        return len({p.index for p in self.parts if isinstance(p, SentenceSlot)})

    def serialize(self) -> str:
        out = []
        for p in self.parts:
            if isinstance(p, Literal):
                out.append(p.text)
            elif isinstance(p, SentenceSlot):
                out.append(SLOT1_TOKEN if p.index == 1 else SLOT2_TOKEN)
            else:
                out.append(MASK_TOKEN)
        return "".join(out)


def parse_template(text: str) -> Template:
    """Parse a template DSL string.

    Whitespace inside literal segments is preserved verbatim.  Raises
    ``MalformedTemplate`` for zero/multiple masks or ``<S2>`` without
    ``<S1>``.
    """
    if not text:
        raise MalformedTemplate("empty template string")
    parts: list[Part] = []
    for piece in _MARKER_RE.split(text):
        if piece == "":
            continue
        if piece == SLOT1_TOKEN:
            parts.append(SentenceSlot(1))
        elif piece == SLOT2_TOKEN:
            parts.append(SentenceSlot(2))
        elif piece == MASK_TOKEN:
            parts.append(MaskSlot())
        else:
            parts.append(Literal(piece))
    return Template(tuple(parts))


@dataclass(frozen=True)
class LabeledExample:
    """One task input: one or two sentences plus a class or real label."""

    id: str
    sentence1: str
    label: Union[str, float]
    sentence2: Optional[str] = None

    @property
    def is_pair(self) -> bool:
        return self.sentence2 is not None

    def sentence(self, index: int) -> str:
        if index == 1:
            return self.sentence1
        if index == 2 and self.sentence2 is not None:
            return self.sentence2
        raise SlotUnfilled(f"example {self.id!r} has no sentence for slot {index}")


@dataclass(frozen=True)
class Verbalizer:
    """Total mapping from label ids to single vocabulary words."""

    mapping: dict[str, str]

    def word(self, label: str) -> str:
        try:
            return self.mapping[label]
        except KeyError:
            raise UnknownLabel(f"label {label!r} not in verbalizer {sorted(self.mapping)}") from None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.mapping))

    def check_total(self, label_set: Iterable[str]) -> None:
        expected = set(label_set)
        if set(self.mapping) != expected:
            raise UnknownLabel(
                f"verbalizer labels {sorted(self.mapping)} != task labels {sorted(expected)}"
            )

    def check_tokenizable(self, backend) -> None:
        """Every word must map to one backend token when space-prefixed."""
        for label, word in self.mapping.items():
            backend.token_id(" " + word)  # raises UnknownToken otherwise


@dataclass(frozen=True)
class Prompt:
    template: Template
    verbalizer: Verbalizer


def _lowercase_first(text: str) -> str:
    # ASCII-only: the tasks are English; non-letters pass through.
    if text and "A" <= text[0] <= "Z":
        return text[0].lower() + text[1:]
    return text


def _emit_sentence(out: list[str], template: Template, part_idx: int, text: str) -> None:
    parts = template.parts
    # rule (c): literal punctuation right after the slot displaces the
    # sentence's own trailing punctuation.
    if part_idx + 1 < len(parts):
        nxt = parts[part_idx + 1]
        if isinstance(nxt, Literal):
            stripped = nxt.text.lstrip()
            if stripped and stripped[0] in _PUNCTUATION and text and text[-1] in _PUNCTUATION:
                text = text[:-1].rstrip()
    at_start = not out or all(s == "" for s in out)
    if not at_start:
        prev = parts[part_idx - 1] if part_idx > 0 else None
        if isinstance(prev, Literal):
            text = _lowercase_first(text)  # rule (b)
        if out[-1] and not out[-1][-1].isspace():
            out.append(" ")  # rule (a)
    out.append(text)


def _emit_mask(out: list[str], token: str) -> None:
    if out and out[-1] and not out[-1][-1].isspace():
        out.append(" ")  # rule (d): one separating space before the fill
    out.append(token)


def _render(template: Template, example: LabeledExample, mask_text: str) -> str:
    out: list[str] = []
    for i, part in enumerate(template.parts):
        if isinstance(part, Literal):
            out.append(part.text)
        elif isinstance(part, SentenceSlot):
            _emit_sentence(out, template, i, example.sentence(part.index))
        else:
            _emit_mask(out, mask_text)
    return "".join(out)


def render(template: Template, example: LabeledExample) -> str:
    """Render a query: one abstract mask token remains in the output."""
    return _render(template, example, MASK_TOKEN)


def render_filled(template: Template, example: LabeledExample, verbalizer: Verbalizer) -> str:
    """Render a demonstration: the mask is replaced by the gold label word."""
    if not isinstance(example.label, str):
        raise UnknownLabel(f"example {example.id!r} has a non-categorical label")
    return _render(template, example, verbalizer.word(example.label))


# --- prompt file format: template<TAB>label1:word1,label2:word2,... ---

def parse_prompt_line(line: str) -> Prompt:
    try:
        template_text, mapping_text = line.rstrip("\n").split("\t")
    except ValueError:
        raise MalformedTemplate(f"prompt line needs one tab separator: {line!r}") from None
    mapping = {}
    for entry in mapping_text.split(","):
        label, _, word = entry.partition(":")
        if not label or not word:
            raise MalformedTemplate(f"bad verbalizer entry {entry!r}")
        mapping[label.strip()] = word.strip()
    return Prompt(parse_template(template_text), Verbalizer(mapping))


def format_prompt_line(prompt: Prompt) -> str:
    mapping = ",".join(f"{l}:{w}" for l, w in sorted(prompt.verbalizer.mapping.items()))
    return f"{prompt.template.serialize()}\t{mapping}"


def load_prompt_file(path) -> list[Prompt]:
    """Read prompts, skipping blank and ``#`` comment lines."""
    prompts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                prompts.append(parse_prompt_line(line))
    return prompts


def load_named_prompt_file(path) -> dict[str, Prompt]:
    """Read prompts keyed by the ``# name`` comment preceding each line."""
    prompts: dict[str, Prompt] = {}
    name = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                name = line[1:].strip()
            elif line.strip():
                prompts[name or f"prompt{len(prompts)}"] = parse_prompt_line(line)
                name = None
    return prompts
