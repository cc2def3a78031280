"""Baselines, the head fine-tuning method, ensembles, and prompt pipelines."""
import numpy as np
import pytest

from promptshot.backend import HashBagEncoder, ToyGenerator, ToyMLMBackend, vocab_from_corpus
from promptshot.datasets import Task, load_dataset, synthetic_sentiment_path
from promptshot.errors import NoUsableTemplate
from promptshot.label_search import SearchConfig
from promptshot.protocol import GridPoint, default_grid, grid_search, sample_split
from promptshot.runner import (
    BaselineSpec,
    HeadMethod,
    PromptPipeline,
    majority_label,
    run_baseline,
    run_ensemble,
)
from promptshot.schema import LabeledExample, Prompt, Verbalizer, parse_template


@pytest.fixture(scope="module")
def setup():
    task, examples = load_dataset(synthetic_sentiment_path())
    pool, test = examples[:400], examples[900:950]
    prompt = Prompt(
        parse_template("<S1> It was [MASK] ."),
        Verbalizer({"positive": "great", "negative": "terrible"}),
    )
    vocab = vocab_from_corpus(
        [e.sentence1 for e in examples], ["It", "was", ".", "great", "terrible"], size=120
    )
    backend = ToyMLMBackend(vocab, seed=7)
    split = sample_split(task, pool, 16, seed=13)
    return task, split, prompt, backend, test


class TestMajority:
    def test_most_frequent(self):
        examples = [LabeledExample(str(i), "x", l) for i, l in enumerate("aabbb")]
        assert majority_label(examples) == "b"

    def test_tie_smallest_label(self):
        examples = [LabeledExample(str(i), "x", l) for i, l in enumerate("ab")]
        assert majority_label(examples) == "a"

    def test_balanced_split_scores_half(self, setup):
        task, split, prompt, backend, test = setup
        score = run_baseline(BaselineSpec("majority"), split, None, backend, task, test)
        golds = [e.label for e in test]
        assert score == pytest.approx(golds.count(majority_label(list(split.train))) / len(golds))


class TestZeroShot:
    def test_no_parameter_updates(self, setup):
        task, split, prompt, backend, test = setup
        before = backend.params_hash()
        run_baseline(BaselineSpec("zero_shot"), split, prompt, backend, task, test)
        assert backend.params_hash() == before
        assert backend.train_step_count == 0

    def test_needs_prompt(self, setup):
        task, split, prompt, backend, test = setup
        with pytest.raises(ValueError):
            run_baseline(BaselineSpec("zero_shot"), split, None, backend, task, test)


class TestInContext:
    def test_no_updates_and_deterministic(self, setup):
        task, split, prompt, backend, test = setup
        a = run_baseline(BaselineSpec("in_context", num_random_demos=8), split, prompt, backend, task, test, seed=3)
        b = run_baseline(BaselineSpec("in_context", num_random_demos=8), split, prompt, backend, task, test, seed=3)
        assert a == b
        assert backend.train_step_count == 0

    def test_truncates_rather_than_fail(self, setup):
        task, split, prompt, backend, test = setup
        # far more demonstrations than the context can hold
        score = run_baseline(
            BaselineSpec("in_context", num_random_demos=200), split, prompt, backend, task, test[:5], seed=0
        )
        assert 0.0 <= score <= 1.0

    def test_head_finetune_redirected(self, setup):
        task, split, prompt, backend, test = setup
        with pytest.raises(ValueError):
            run_baseline(BaselineSpec("head_finetune"), split, prompt, backend, task, test)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            BaselineSpec("banana")


class TestHeadMethod:
    def test_parameter_count(self, setup):
        task, split, prompt, backend, test = setup
        method = HeadMethod(backend, task)
        head = method._new_head()
        assert head.num_parameters() == len(task.labels) * backend.feature_dim

    def test_trains_and_early_stops(self, setup):
        task, split, prompt, backend, test = setup
        method = HeadMethod(backend, task, head_seed=1)
        trial = method.run_trial(split, GridPoint(0.5, 4), 40, 10, test, seed=0)
        assert [s for s, _ in trial.dev_history] == [10, 20, 30, 40]
        assert trial.dev_metric == max(m for _, m in trial.dev_history)
        assert 0.0 <= trial.test_metric <= 1.0

    def test_backend_untouched(self, setup):
        task, split, prompt, backend, test = setup
        before = backend.params_hash()
        HeadMethod(backend, task).run_trial(split, GridPoint(0.1, 4), 10, 5, test, seed=0)
        assert backend.params_hash() == before

    def test_under_grid_search(self, setup):
        task, split, prompt, backend, test = setup
        grid = [GridPoint(0.1, 4), GridPoint(0.5, 4)]
        best = grid_search(split, grid, HeadMethod(backend, task), test, steps=20, eval_every=10, seed=0)
        assert best.test_metric >= 0.0


class TestEnsemble:
    def test_two_member_ensemble(self, setup):
        task, split, prompt, backend, test = setup
        templates = [
            parse_template("<S1> It was [MASK] ."),
            parse_template("<S1> [MASK]"),
        ]
        score = run_ensemble(
            templates, prompt.verbalizer, task, split, backend, test[:20],
            steps=30, batch_size=4, learning_rate=0.5,
        )
        assert 0.0 <= score <= 1.0
        assert backend.train_step_count == 0

    def test_needs_templates(self, setup):
        task, split, prompt, backend, test = setup
        with pytest.raises(ValueError):
            run_ensemble([], prompt.verbalizer, task, split, backend, test)


class TestPromptPipeline:
    def _generator(self):
        vocab = ["<X>", "<Y>", "It", "was", ".", "great", "terrible", "</s>"]
        ids = {w: i for i, w in enumerate(vocab)}
        target = ["<X>", "It", "was", "<Y>", ".", "</s>"]
        table = {}
        for i, token in enumerate(target):
            p = np.full(len(vocab), 0.05 / (len(vocab) - 1))
            p[ids[token]] = 0.95
            table[(None, tuple(target[:i]))] = p
        return ToyGenerator(vocab, table)

    def test_manual_source_returns_manual_prompt(self, setup):
        task, split, prompt, backend, test = setup
        pipeline = PromptPipeline(source="manual", manual_prompt=prompt, backend=backend, task=task)
        assert pipeline.prompt_for(split, 13) == prompt
        assert pipeline.method_name() == "prompt_ft"

    def test_auto_template_persists_artifacts(self, setup, tmp_path):
        task, split, prompt, backend, test = setup
        pipeline = PromptPipeline(
            source="auto_template", manual_prompt=prompt, backend=backend, task=task,
            generator=self._generator(), artifact_dir=tmp_path,
            search_config=SearchConfig(steps=5, learning_rate=0.5),
            beam_width=6, max_span_len=6,
        )
        built = pipeline.prompt_for(split, 13)
        assert built.verbalizer == prompt.verbalizer
        assert (tmp_path / "template_candidates_seed13.tsv").exists()

    def test_auto_label_persists_artifacts(self, setup, tmp_path):
        task, split, prompt, backend, test = setup
        pipeline = PromptPipeline(
            source="auto_label", manual_prompt=prompt, backend=backend, task=task,
            artifact_dir=tmp_path,
            search_config=SearchConfig(pruned_size=4, num_assignments=4, steps=5, learning_rate=0.5),
        )
        built = pipeline.prompt_for(split, 13)
        assert built.template == prompt.template
        assert (tmp_path / "label_candidates_seed13.tsv").exists()

    def test_method_names(self, setup):
        task, split, prompt, backend, test = setup
        from promptshot.demos import DemoConfig

        base = dict(manual_prompt=prompt, backend=backend, task=task)
        assert PromptPipeline(source="auto_both", **base).method_name() == "prompt_ft_auto_tl"
        assert (
            PromptPipeline(source="manual", demo_config=DemoConfig(), **base).method_name()
            == "prompt_ft_demo"
        )

    def test_unknown_source_rejected(self, setup):
        task, split, prompt, backend, test = setup
        with pytest.raises(ValueError):
            PromptPipeline(source="psychic", manual_prompt=prompt, backend=backend, task=task)
