"""Shared fixtures: a small deterministic backend and a sentiment prompt."""
import numpy as np
import pytest

from promptshot.backend import HashBagEncoder, ToyMLMBackend
from promptshot.datasets import Task, load_dataset, synthetic_sentiment_path
from promptshot.schema import LabeledExample, Prompt, Verbalizer, parse_template

SMALL_VOCAB = [
    "great", "terrible", "good", "bad", "okay",
    "the", "film", "plot", "is", "was", "It", ".", ",", "?", "!",
    "a", "an", "fine", "awful", "superb",
]


@pytest.fixture
def backend():
    return ToyMLMBackend(SMALL_VOCAB, seed=11)


@pytest.fixture
def encoder():
    return HashBagEncoder()


@pytest.fixture
def sentiment_prompt():
    return Prompt(
        parse_template("<S1> It was [MASK] ."),
        Verbalizer({"positive": "great", "negative": "terrible"}),
    )


@pytest.fixture
def sentiment_task():
    return Task(name="sentiment", labels=("negative", "positive"))


@pytest.fixture
def sentiment_examples():
    rows = [
        ("the film is superb .", "positive"),
        ("the plot was awful .", "negative"),
        ("the film is fine .", "positive"),
        ("the plot is terrible .", "negative"),
        ("the film was great .", "positive"),
        ("the plot was bad .", "negative"),
        ("a superb film .", "positive"),
        ("an awful plot .", "negative"),
    ]
    return [
        LabeledExample(id=f"ex-{i}", sentence1=s, label=l) for i, (s, l) in enumerate(rows)
    ]


@pytest.fixture(scope="session")
def bundled_sentiment():
    task, examples = load_dataset(synthetic_sentiment_path())
    return task, examples


def train_rng(seed=0):
    return np.random.default_rng(seed)
