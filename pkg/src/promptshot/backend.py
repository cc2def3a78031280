"""Model backend contracts and the deterministic toy backends used in tests.

Three capabilities are covered: a masked language model (mask-position
logits + gradient training), a span-infilling generator (conditional token
log-probabilities), and a sentence encoder (unit-norm embeddings).

The toy MLM is a bag-of-words linear model: the input's vocabulary counts
are projected to per-token logits (``logits = W f + b``) and trained with
plain gradient descent.  Everything is deterministic under a fixed seed so
higher-level search and protocol runs are bit-reproducible.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    CapabilityError,
    EmptyBatch,
    EmptyInput,
    InputTooLong,
    NoMaskPresent,
    UnknownToken,
)
from .schema import MASK_TOKEN


@dataclass(frozen=True)
class BackendCapabilities:
    vocab_size: int
    max_input_length: int
    supports_training: bool
    supports_generation: bool
    supports_segments: bool
    num_pretrained_segments: int = 0
    extendable_segments: bool = False

    def __post_init__(self) -> None:
        if self.max_input_length < 16:
            raise ValueError("max_input_length must be at least 16")


@dataclass(frozen=True)
class ClassificationTarget:
    """Cross-entropy over the restricted softmax of the label-word tokens."""

    label_token_ids: tuple[int, ...]
    gold_index: int


@dataclass(frozen=True)
class RegressionTarget:
    """KL against a Bernoulli over the two pole-word tokens."""

    lower_token_id: int
    upper_token_id: int
    weight: float  # observed mixture weight in [0, 1]


LossSpec = Union[ClassificationTarget, RegressionTarget]
_CLAMP = 1e-12


class ToyMLMBackend:
    """Whitespace-tokenized bag-of-words MLM over a fixed small vocabulary.

    Tokens outside the vocabulary contribute nothing to the feature vector;
    the mask token is special and never counted.  ``token_id`` treats a
    leading space as the word-boundary marker and resolves the bare word.
    """

    def __init__(
        self,
        vocab: Sequence[str],
        seed: int = 0,
        init_scale: float = 0.1,
        max_input_length: int = 256,
    ) -> None:
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary contains duplicates")
        if MASK_TOKEN in vocab:
            raise ValueError(f"{MASK_TOKEN} is reserved and cannot be a vocabulary word")
        self.vocab = tuple(vocab)
        self.seed = seed
        self._ids = {w: i for i, w in enumerate(self.vocab)}
        v = len(self.vocab)
        rng = np.random.default_rng(seed)
        self.W = rng.normal(0.0, init_scale, size=(v, v))
        self.b = np.zeros(v)
        self.train_step_count = 0
        self._max_input_length = max_input_length

    # --- capabilities / identity ---

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            vocab_size=len(self.vocab),
            max_input_length=self._max_input_length,
            supports_training=True,
            supports_generation=False,
            supports_segments=True,
            num_pretrained_segments=2,
            extendable_segments=True,
        )

    def num_parameters(self) -> int:
        return self.W.size + self.b.size

    def params_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.W).tobytes())
        h.update(np.ascontiguousarray(self.b).tobytes())
        return h.hexdigest()

    def clone(self) -> "ToyMLMBackend":
        other = ToyMLMBackend.__new__(ToyMLMBackend)
        other.vocab = self.vocab
        other.seed = self.seed
        other._ids = self._ids
        other.W = self.W.copy()
        other.b = self.b.copy()
        other.train_step_count = 0
        other._max_input_length = self._max_input_length
        return other

    def get_params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.W.copy(), self.b.copy()

    def set_params(self, params: tuple[np.ndarray, np.ndarray]) -> None:
        W, b = params
        self.W = W.copy()
        self.b = b.copy()

    # --- tokenization ---

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def token_id(self, word: str) -> int:
        bare = word[1:] if word.startswith(" ") else word
        if bare not in self._ids:
            raise UnknownToken(f"{bare!r} is not a single token in the backend vocabulary")
        return self._ids[bare]

    def features(self, text: str) -> np.ndarray:
        """Bag-of-words count vector; also the toy stand-in for h_[CLS]."""
        f = np.zeros(len(self.vocab))
        for tok in self.tokenize(text):
            idx = self._ids.get(tok)
            if idx is not None:
                f[idx] += 1.0
        return f

    @property
    def feature_dim(self) -> int:
        return len(self.vocab)

    # --- inference ---

    def mask_logits(self, text: str, segment_ids: Optional[Sequence[int]] = None) -> np.ndarray:
        tokens = self.tokenize(text)
        if tokens.count(MASK_TOKEN) != 1:
            raise NoMaskPresent(f"input must contain exactly one {MASK_TOKEN}")
        if len(tokens) > self._max_input_length:
            raise InputTooLong(f"{len(tokens)} tokens > limit {self._max_input_length}")
        if segment_ids is not None and len(segment_ids) != len(tokens):
            raise ValueError("segment ids must align with the token sequence")
        return self.W @ self.features(text) + self.b

    # --- training ---

    def _loss_and_logit_grad(self, logits: np.ndarray, spec: LossSpec) -> tuple[float, np.ndarray]:
        dlogits = np.zeros_like(logits)
        if isinstance(spec, ClassificationTarget):
            ids = np.asarray(spec.label_token_ids)
            z = logits[ids]
            z = z - z.max()
            p = np.exp(z)
            p /= p.sum()
            loss = -math.log(max(p[spec.gold_index], _CLAMP))
            grad = p.copy()
            grad[spec.gold_index] -= 1.0
            np.add.at(dlogits, ids, grad)
            return loss, dlogits
        t = spec.weight
        z = np.array([logits[spec.lower_token_id], logits[spec.upper_token_id]])
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        p_u = min(max(p[1], _CLAMP), 1.0 - _CLAMP)
        loss = 0.0
        if t > 0.0:
            loss += t * math.log(max(t, _CLAMP) / p_u)
        if t < 1.0:
            loss += (1.0 - t) * math.log(max(1.0 - t, _CLAMP) / (1.0 - p_u))
        dlogits[spec.upper_token_id] += p[1] - t
        dlogits[spec.lower_token_id] += t - p[1]
        return loss, dlogits

    def batch_loss(self, batch: Sequence[tuple[str, LossSpec]]) -> float:
        if not batch:
            raise EmptyBatch("empty minibatch")
        return sum(self._loss_and_logit_grad(self.mask_logits(t), s)[0] for t, s in batch) / len(batch)

    def train_step(self, batch: Sequence[tuple[str, LossSpec]], learning_rate: float) -> float:
        """One gradient-descent step; returns the pre-update mean batch loss."""
        if not batch:
            raise EmptyBatch("empty minibatch")
        total = 0.0
        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        for text, spec in batch:
            f = self.features(text)
            logits = self.mask_logits(text)
            loss, dlogits = self._loss_and_logit_grad(logits, spec)
            total += loss
            dW += np.outer(dlogits, f)
            db += dlogits
        n = len(batch)
        self.W -= learning_rate * dW / n
        self.b -= learning_rate * db / n
        self.train_step_count += 1
        return total / n

    # --- persistence: small JSON header + flat float64 parameter block ---

    def save(self, path) -> None:
        header = {
            "kind": "toy_mlm",
            "seed": self.seed,
            "vocab": list(self.vocab),
            "max_input_length": self._max_input_length,
        }
        flat = np.concatenate([self.W.ravel(), self.b])
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8"))
            fh.write(b"\n")
            fh.write(flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyMLMBackend":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            flat = np.frombuffer(fh.read(), dtype="<f8")
        backend = cls(
            header["vocab"],
            seed=header["seed"],
            max_input_length=header["max_input_length"],
        )
        v = len(backend.vocab)
        if flat.size != v * v + v:
            raise ValueError("parameter block size does not match the header vocabulary")
        backend.W = flat[: v * v].reshape(v, v).copy()
        backend.b = flat[v * v :].copy()
        return backend


class ToyGenerator:
    """Span-infilling generator backed by a conditional probability table.

    ``table`` maps ``(conditioning_text, prefix_tuple)`` to a probability
    vector over the vocabulary.  A ``None`` conditioning key matches any
    conditioning text; contexts absent from the table fall back to the
    uniform distribution, which makes decoding objectives exactly
    checkable by summation.
    """

    def __init__(
        self,
        vocab: Sequence[str],
        table: Optional[dict[tuple[str, tuple[str, ...]], Sequence[float]]] = None,
        eos_token: str = "</s>",
    ) -> None:
        if eos_token not in vocab:
            raise ValueError("vocabulary must contain the end-of-sequence token")
        self.vocab = tuple(vocab)
        self.eos_token = eos_token
        self._ids = {w: i for i, w in enumerate(self.vocab)}
        self.table = {}
        if table:
            for key, probs in table.items():
                p = np.asarray(probs, dtype=float)
                if p.shape != (len(self.vocab),) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
                    raise ValueError(f"table entry for {key} is not a distribution over the vocabulary")
                self.table[key] = p

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            vocab_size=len(self.vocab),
            max_input_length=1024,
            supports_training=False,
            supports_generation=True,
            supports_segments=False,
        )

    def distribution(self, prefix: Sequence[str], conditioning: str) -> np.ndarray:
        probs = self.table.get((conditioning, tuple(prefix)))
        if probs is None:
            probs = self.table.get((None, tuple(prefix)))
        if probs is None:
            return np.full(len(self.vocab), 1.0 / len(self.vocab))
        return probs

    def token_log_prob(self, prefix: Sequence[str], token: str, conditioning: str) -> float:
        if token not in self._ids:
            raise UnknownToken(f"{token!r} not in generator vocabulary")
        p = self.distribution(prefix, conditioning)[self._ids[token]]
        return math.log(max(p, _CLAMP))

    def train_step(self, *args, **kwargs):
        raise CapabilityError("toy generator does not support training")


class HashBagEncoder:
    """Deterministic sentence encoder: signed hash-bag of tokens, L2-normed."""

    def __init__(self, dim: int = 256) -> None:
        self.dim = dim

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        vec = np.zeros(self.dim)
        vec[index] = sign
        return vec

    def sentence_embedding(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            raise EmptyInput("cannot embed empty text")
        vec = np.zeros(self.dim)
        for tok in tokens:
            vec += self._token_vector(tok)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # opposite-signed collisions cancelled out; fall back to a stable
            # direction derived from the whole text
            vec = self._token_vector("\x00" + text)
            norm = 1.0
        return vec / norm


def vocab_from_corpus(texts: Sequence[str], extra_words: Sequence[str] = (), size: int = 200) -> list[str]:
    """Most frequent whitespace tokens plus required extra words.

    Frequency ties break alphabetically; the mask symbol is never included.
    Extra words (label words, template literals) always make the cut.
    """
    from collections import Counter

    counts: Counter[str] = Counter()
    for text in texts:
        for tok in text.split():
            if tok != MASK_TOKEN:
                counts[tok] += 1
    vocab = list(dict.fromkeys(w.strip() for w in extra_words if w.strip() and w != MASK_TOKEN))
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(vocab) >= size:
            break
        if word not in vocab:
            vocab.append(word)
    return vocab


def embedding_input(example) -> str:
    """Raw sentence text fed to the encoder: pairs joined by one space."""
    if example.sentence2 is not None:
        return f"{example.sentence1} {example.sentence2}"
    return example.sentence1


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))
