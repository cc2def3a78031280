"""Metric scoring against hand-computed and library-checked values."""
import pytest

from promptshot.metrics import METRICS, compute_metric


class TestAccuracy:
    def test_simple(self):
        assert compute_metric(["a", "b", "a"], ["a", "b", "b"], "accuracy") == pytest.approx(2 / 3)

    def test_perfect(self):
        assert compute_metric(["a"], ["a"], "accuracy") == 1.0


class TestF1:
    def test_hand_computed(self):
        # tp=2, fp=1, fn=1: precision 2/3, recall 2/3, F1 = 2/3
        preds = ["pos", "pos", "pos", "neg", "neg"]
        golds = ["pos", "pos", "neg", "pos", "neg"]
        assert compute_metric(preds, golds, "f1", positive_label="pos") == pytest.approx(2 / 3)

    def test_default_positive_is_greatest_label(self):
        preds = ["b", "a"]
        golds = ["b", "b"]
        # positive defaults to "b": tp=1, fn=1, fp=0 -> F1 = 2/3
        assert compute_metric(preds, golds, "f1") == pytest.approx(2 / 3)


class TestMatthews:
    def test_perfect_and_inverted(self):
        golds = ["a", "a", "b", "b"]
        assert compute_metric(golds, golds, "matthews") == pytest.approx(1.0)
        inverted = ["b", "b", "a", "a"]
        assert compute_metric(inverted, golds, "matthews") == pytest.approx(-1.0)

    def test_chance_is_zero(self):
        assert compute_metric(["a", "b"], ["a", "a"], "matthews") == pytest.approx(0.0)


class TestPearson:
    def test_linear_relation(self):
        assert compute_metric([1, 2, 3], [2, 4, 6], "pearson") == pytest.approx(1.0)
        assert compute_metric([3, 2, 1], [2, 4, 6], "pearson") == pytest.approx(-1.0)

    def test_degenerate_variance_returns_zero(self):
        assert compute_metric([1.0, 1.0], [0.0, 5.0], "pearson") == 0.0


class TestValidation:
    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            compute_metric(["a"], ["a"], "auc")

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_metric(["a"], ["a", "b"], "accuracy")

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metric([], [], "accuracy")

    def test_metric_names(self):
        assert METRICS == ("accuracy", "f1", "matthews", "pearson")
