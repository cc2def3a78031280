"""Cloze-style inference: restricted-softmax classification, regression as
interpolation between two pole words, and the standard head baseline.

Classification scores are the softmax over the mask-position logits of the
label words only; all other vocabulary tokens are ignored.  Regression maps
the upper-pole probability linearly onto the task interval and trains with
a Bernoulli KL divergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfInterval, ShapeError
from .schema import Verbalizer

_CLAMP = 1e-12


@dataclass(frozen=True)
class ClassDistribution:
    """Per-label probabilities over the task label set, in label order."""

    labels: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.probs):
            raise ShapeError("labels and probabilities differ in length")
        if any(p < 0 for p in self.probs):
            raise ValueError("negative probability")
        if not math.isclose(sum(self.probs), 1.0, abs_tol=1e-6):
            raise ValueError(f"probabilities sum to {sum(self.probs)}, not 1")

    def prob(self, label: str) -> float:
        return self.probs[self.labels.index(label)]

    def argmax(self) -> str:
        return self.labels[int(np.argmax(self.probs))]


@dataclass(frozen=True)
class RegressionSpec:
    """Bounded interval with its two pole labels."""

    v_lower: float
    v_upper: float
    y_lower: str = "lower"
    y_upper: str = "upper"

    def __post_init__(self) -> None:
        if not self.v_lower < self.v_upper:
            raise ValueError("interval must satisfy v_lower < v_upper")


def class_probabilities(logits: np.ndarray, verbalizer: Verbalizer, backend) -> ClassDistribution:
    """Softmax restricted to the label-word logits at the mask position."""
    labels = verbalizer.labels
    ids = [backend.token_id(" " + verbalizer.word(l)) for l in labels]
    z = np.asarray([logits[i] for i in ids], dtype=float)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return ClassDistribution(labels, tuple(p.tolist()))


def log_class_probabilities(logits: np.ndarray, verbalizer: Verbalizer, backend) -> dict[str, float]:
    dist = class_probabilities(logits, verbalizer, backend)
    return {l: math.log(max(p, _CLAMP)) for l, p in zip(dist.labels, dist.probs)}


def classification_loss(dist: ClassDistribution, gold: str) -> float:
    """Cross-entropy, clamped so a zero gold probability stays finite."""
    return -math.log(max(dist.prob(gold), _CLAMP))


def regression_predict(p_upper: float, spec: RegressionSpec) -> float:
    """Mixture of the two pole values weighted by the upper-pole probability."""
    if not 0.0 <= p_upper <= 1.0:
        raise ValueError("p_upper must lie in [0, 1]")
    return spec.v_lower + p_upper * (spec.v_upper - spec.v_lower)


def regression_target(y: float, spec: RegressionSpec) -> float:
    """Observed mixture weight of a gold value within the interval."""
    if not spec.v_lower <= y <= spec.v_upper:
        raise OutOfInterval(f"gold value {y} outside [{spec.v_lower}, {spec.v_upper}]")
    return (y - spec.v_lower) / (spec.v_upper - spec.v_lower)


def regression_loss(p_upper: float, target: float) -> float:
    """KL(Bernoulli(target) || Bernoulli(p_upper)) with 0 log 0 = 0."""
    if not 0.0 <= p_upper <= 1.0 or not 0.0 <= target <= 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    p = min(max(p_upper, _CLAMP), 1.0 - _CLAMP)
    loss = 0.0
    if target > 0.0:
        loss += target * math.log(target / p)
    if target < 1.0:
        loss += (1.0 - target) * math.log((1.0 - target) / (1.0 - p))
    return loss


@dataclass
class BaselineHead:
    """Randomly initialized task head on top of the encoder's [CLS] vector.

    Classification holds a |Y| x d matrix, regression a d-vector; this is
    exactly the set of new parameters prompt-based fine-tuning avoids.
    """

    weights: np.ndarray

    @classmethod
    def for_classification(cls, num_labels: int, dim: int, seed: int = 0, scale: float = 0.02) -> "BaselineHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(num_labels, dim)))

    @classmethod
    def for_regression(cls, dim: int, seed: int = 0, scale: float = 0.02) -> "BaselineHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(dim,)))

    @property
    def is_regression(self) -> bool:
        return self.weights.ndim == 1

    def num_parameters(self) -> int:
        return int(self.weights.size)


def baseline_head_forward(cls_vector: np.ndarray, head: BaselineHead, labels: tuple[str, ...] | None = None):
    """softmax(W h) for classification heads, w . h for regression heads."""
    h = np.asarray(cls_vector, dtype=float)
    if head.is_regression:
        if head.weights.shape != h.shape:
            raise ShapeError(f"head dim {head.weights.shape} != vector dim {h.shape}")
        return float(head.weights @ h)
    if head.weights.shape[1] != h.shape[0]:
        raise ShapeError(f"head dim {head.weights.shape[1]} != vector dim {h.shape[0]}")
    z = head.weights @ h
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    if labels is None:
        labels = tuple(str(i) for i in range(len(p)))
    if len(labels) != head.weights.shape[0]:
        raise ShapeError("label count does not match head rows")
    return ClassDistribution(tuple(labels), tuple(p.tolist()))
