"""Demonstration pools, sampling contracts, contexts, and ensembling."""
import math

import numpy as np
import pytest

from promptshot.backend import BackendCapabilities, HashBagEncoder, ToyMLMBackend, cosine, embedding_input
from promptshot.demos import (
    DemoConfig,
    DemonstrationSet,
    assign_segments,
    build_context,
    build_pools,
    class_pools,
    ensemble_predict,
    sample_demo_set,
)
from promptshot.errors import CapabilityError, EmptyClassPool, InputTooLong
from promptshot.schema import LabeledExample

from conftest import SMALL_VOCAB


class TestDemoConfig:
    def test_defaults(self):
        cfg = DemoConfig()
        assert cfg.similarity_fraction == 0.5
        assert cfg.num_sets == 16
        assert cfg.sampling_mode == "uniform"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"similarity_fraction": 0.0},
            {"similarity_fraction": 1.5},
            {"num_sets": 0},
            {"sampling_mode": "weird"},
            {"segment_strategy": "weird"},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            DemoConfig(**kwargs)


class TestDemonstrationSet:
    def test_no_repeated_class(self):
        a = LabeledExample("1", "x", "pos")
        b = LabeledExample("2", "y", "pos")
        with pytest.raises(ValueError):
            DemonstrationSet((("pos", a), ("pos", b)))


class TestPools:
    def test_query_excluded_by_id(self, sentiment_examples):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        assert all(ex.id != query.id for pool in pools.values() for ex in pool)
        assert len(pools["positive"]) == 3  # four positives minus the query
        assert len(pools["negative"]) == 4

    def test_empty_class_raises(self):
        query = LabeledExample("q", "x", "pos")
        only_pos = [LabeledExample("1", "y", "pos")]
        with pytest.raises(EmptyClassPool):
            class_pools(query, only_pos, ("pos", "neg"))

    def test_selective_pool_is_top_fraction(self, sentiment_examples, encoder):
        query = sentiment_examples[0]
        embeddings = {
            ex.id: encoder.sentence_embedding(embedding_input(ex))
            for ex in sentiment_examples
        }
        pools = build_pools(query, sentiment_examples, embeddings, 0.5, ("negative", "positive"))
        full = class_pools(query, sentiment_examples, ("negative", "positive"))
        q = embeddings[query.id]
        for label, kept in pools.items():
            assert len(kept) == math.ceil(0.5 * len(full[label]))
            kept_ids = {ex.id for ex in kept}
            worst_kept = min(cosine(q, embeddings[ex.id]) for ex in kept)
            for ex in full[label]:
                if ex.id not in kept_ids:
                    assert cosine(q, embeddings[ex.id]) <= worst_kept + 1e-12

    def test_tiny_pool_rounds_up(self, encoder):
        query = LabeledExample("q", "alpha beta", "pos")
        train = [
            LabeledExample("1", "alpha", "pos"),
            LabeledExample("2", "gamma", "neg"),
        ]
        embeddings = {
            ex.id: encoder.sentence_embedding(ex.sentence1) for ex in [query] + train
        }
        pools = build_pools(query, train, embeddings, 0.5, ("neg", "pos"))
        assert len(pools["pos"]) == 1 and len(pools["neg"]) == 1


class TestSampling:
    def test_one_per_class_ascending_order(self, sentiment_examples):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        rng = np.random.default_rng(0)
        for _ in range(200):
            ds = sample_demo_set(pools, rng)
            labels = [l for l, _ in ds.members]
            assert labels == ["negative", "positive"]
            assert all(ex.id != query.id for _, ex in ds.members)

    def test_uniform_frequency(self, sentiment_examples):
        query = sentiment_examples[1]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        rng = np.random.default_rng(7)
        counts = {}
        draws = 4000
        for _ in range(draws):
            ds = sample_demo_set(pools, rng)
            for _, ex in ds.members:
                counts[ex.id] = counts.get(ex.id, 0) + 1
        for ex in pools["positive"]:
            assert counts[ex.id] / draws == pytest.approx(1 / len(pools["positive"]), abs=0.03)

    def test_deterministic_under_seed(self, sentiment_examples):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        a = [sample_demo_set(pools, np.random.default_rng(3)).members for _ in range(5)]
        b = [sample_demo_set(pools, np.random.default_rng(3)).members for _ in range(5)]
        assert a == b


class TestBuildContext:
    def test_query_first_then_demos(self, sentiment_examples, sentiment_prompt, backend):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        ds = sample_demo_set(pools, np.random.default_rng(0))
        context = build_context(query, ds, sentiment_prompt, backend)
        assert context.startswith("the film is superb . It was [MASK] .")
        assert context.count("[MASK]") == 1
        assert "great ." in context and "terrible ." in context

    def test_truncation_drops_last_class_first(self, sentiment_examples, sentiment_prompt, backend, caplog):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        ds = sample_demo_set(pools, np.random.default_rng(0))
        full = build_context(query, ds, sentiment_prompt, backend)
        query_text = build_context(query, None, sentiment_prompt, backend)
        # a budget just under the full context forces dropping the last demo
        budget = len(backend.tokenize(full)) - 1
        context = build_context(query, ds, sentiment_prompt, backend, max_len=budget)
        assert len(backend.tokenize(context)) <= budget
        assert context.startswith(query_text)
        # the earlier (negative-class) demonstration survives, the later one goes
        neg_demo_word = sentiment_prompt.verbalizer.word("negative")
        pos_demo_word = sentiment_prompt.verbalizer.word("positive")
        assert f"It was {neg_demo_word} ." in context
        assert f"It was {pos_demo_word} ." not in context

    def test_query_over_budget_raises(self, sentiment_examples, sentiment_prompt, backend):
        query = LabeledExample("long", "word " * 300, "positive")
        with pytest.raises(InputTooLong):
            build_context(query, None, sentiment_prompt, backend)

    def test_no_demos_is_plain_query(self, sentiment_examples, sentiment_prompt, backend):
        query = sentiment_examples[2]
        assert build_context(query, None, sentiment_prompt, backend) == (
            "the film is fine . It was [MASK] ."
        )


class TestSegments:
    caps = BackendCapabilities(
        vocab_size=10, max_input_length=64, supports_training=True,
        supports_generation=False, supports_segments=True,
        num_pretrained_segments=2, extendable_segments=True,
    )

    def test_one_seg(self):
        assert assign_segments("one_seg", 2, 1, self.caps) == [0, 0, 0]

    def test_two_seg(self):
        assert assign_segments("two_seg", 2, 2, self.caps) == [0, 0, 1, 1, 1, 1]

    def test_n_seg_three_class_pair(self):
        # query pair + 3 demo pairs: 8 sentence units, each its own id
        ids = assign_segments("n_seg", 3, 2, self.caps)
        assert ids == list(range(8))

    def test_n_seg_needs_extendable_backend(self):
        fixed = BackendCapabilities(
            vocab_size=10, max_input_length=64, supports_training=True,
            supports_generation=False, supports_segments=True,
            num_pretrained_segments=2, extendable_segments=False,
        )
        with pytest.raises(CapabilityError):
            assign_segments("n_seg", 3, 2, fixed)

    def test_no_segment_support(self):
        none = BackendCapabilities(
            vocab_size=10, max_input_length=64, supports_training=True,
            supports_generation=False, supports_segments=False,
        )
        with pytest.raises(CapabilityError):
            assign_segments("one_seg", 2, 1, none)


class TestEnsemblePredict:
    def test_distribution_and_determinism(self, sentiment_examples, sentiment_prompt, backend):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        a = ensemble_predict(query, pools, sentiment_prompt, backend, 8, np.random.default_rng(5))
        b = ensemble_predict(query, pools, sentiment_prompt, backend, 8, np.random.default_rng(5))
        assert a == b
        assert sum(a.probs) == pytest.approx(1.0)

    def test_single_set_matches_direct_context(self, sentiment_examples, sentiment_prompt, backend):
        from promptshot.inference import class_probabilities

        query = sentiment_examples[3]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        seed = 123
        ds = sample_demo_set(pools, np.random.default_rng(seed))
        context = build_context(query, ds, sentiment_prompt, backend)
        direct = class_probabilities(
            backend.mask_logits(context), sentiment_prompt.verbalizer, backend
        )
        ens = ensemble_predict(query, pools, sentiment_prompt, backend, 1, np.random.default_rng(seed))
        assert ens.probs == pytest.approx(direct.probs)

    def test_invariant_to_set_order(self, sentiment_examples, sentiment_prompt, backend, monkeypatch):
        # averaging log-probabilities must not depend on the order in which
        # the demonstration sets are drawn
        import promptshot.demos as demos_mod

        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        sets = [sample_demo_set(pools, np.random.default_rng(s)) for s in range(6)]

        def feed(sequence):
            it = iter(sequence)
            return lambda _pools, _rng: next(it)

        monkeypatch.setattr(demos_mod, "sample_demo_set", feed(sets))
        forward = ensemble_predict(query, pools, sentiment_prompt, backend, len(sets), np.random.default_rng(0))
        monkeypatch.setattr(demos_mod, "sample_demo_set", feed(list(reversed(sets))))
        backward = ensemble_predict(query, pools, sentiment_prompt, backend, len(sets), np.random.default_rng(0))
        assert forward.probs == pytest.approx(backward.probs, abs=1e-12)

    def test_needs_at_least_one_set(self, sentiment_examples, sentiment_prompt, backend):
        query = sentiment_examples[0]
        pools = class_pools(query, sentiment_examples, ("negative", "positive"))
        with pytest.raises(ValueError):
            ensemble_predict(query, pools, sentiment_prompt, backend, 0, np.random.default_rng(0))
