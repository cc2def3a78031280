"""Command-line entry point.

Subcommands: ``run`` (full multi-seed protocol), ``search-labels``,
``search-templates``, ``baseline``, and ``report``.  Options can come from
an INI config file (section.key mirrors the option names); explicit flags
win.  ``PROMPTSHOT_OUTPUT_DIR`` and ``PROMPTSHOT_WORKERS`` override the
output directory and worker count.  On failure a machine-readable error
record is printed to stderr and the exit code is nonzero.
"""
from __future__ import annotations

import configparser
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .backend import HashBagEncoder, ToyGenerator, ToyMLMBackend, vocab_from_corpus
from .datasets import load_dataset, manual_prompts_path, synthetic_sentiment_path
from .demos import DemoConfig
from .errors import PromptshotError
from .inference import RegressionSpec
from .label_search import SearchConfig, save_candidates, search_label_words
from .protocol import DEFAULT_SEEDS, run_protocol, sample_split
from .report import emit_report, load_records
from .runner import BaselineSpec, HeadMethod, PromptPipeline, run_baseline
from .schema import Literal, load_named_prompt_file, load_prompt_file
from .template_gen import generate_template_candidates, save_template_candidates
from .protocol import grid_search, default_grid


def _fail(error: Exception) -> None:
    record = {"error": type(error).__name__, "message": str(error)}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


def _load_config(path):
    cfg = configparser.ConfigParser()
    if path:
        cfg.read(path)
    return cfg


def _cfg(cfg, section, key, default=None, cast=str):
    if cfg.has_option(section, key):
        raw = cfg.get(section, key)
        return cast(raw)
    return default


def _resolve(value, cfg, section, key, default, cast=str):
    if value is not None:
        return value
    return _cfg(cfg, section, key, default, cast)


def _output_dir(value) -> Path:
    env = os.environ.get("PROMPTSHOT_OUTPUT_DIR")
    out = Path(env) if env else Path(value or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers(value) -> int:
    env = os.environ.get("PROMPTSHOT_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, value or 1)


def _load_prompt(prompt_name, prompt_file):
    if prompt_file:
        prompts = load_prompt_file(prompt_file)
        if not prompts:
            raise PromptshotError(f"no prompts in {prompt_file}")
        return prompts[0]
    named = load_named_prompt_file(manual_prompts_path())
    name = prompt_name or "sst2"
    if name not in named:
        raise PromptshotError(f"unknown bundled prompt {name!r}; have {sorted(named)}")
    return named[name]


def _load_task(dataset, regression, metric):
    path = Path(dataset) if dataset else synthetic_sentiment_path()
    spec = None
    if regression:
        lower, _, upper = regression.partition(":")
        spec = RegressionSpec(float(lower), float(upper))
    return load_dataset(path, regression=spec, metric=metric)


def _split_test(examples, test_fraction):
    n_test = max(1, int(round(test_fraction * len(examples))))
    return examples[:-n_test], examples[-n_test:]


def _template_words(prompt) -> list[str]:
    words = []
    for part in prompt.template.parts:
        if isinstance(part, Literal):
            words.extend(part.text.split())
    words.extend(prompt.verbalizer.mapping.values())
    return words


def _build_backend(examples, prompt, vocab_size, seed):
    texts = [ex.sentence1 + (" " + ex.sentence2 if ex.sentence2 else "") for ex in examples]
    vocab = vocab_from_corpus(texts, _template_words(prompt), size=vocab_size)
    return ToyMLMBackend(vocab, seed=seed)


@click.group()
def main() -> None:
    """Few-shot prompt-based fine-tuning toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", type=click.Path(exists=True), default=None, help="TSV dataset; bundled synthetic data if omitted")
@click.option("--prompt", "prompt_name", default=None, help="bundled prompt name (e.g. sst2)")
@click.option("--prompt-file", type=click.Path(exists=True), default=None)
@click.option("--prompt-source", type=click.Choice(["manual", "auto_template", "auto_label", "auto_both"]), default=None)
@click.option("--regression", default=None, help="interval as lower:upper to treat labels as real values")
@click.option("--metric", default=None)
@click.option("--demos/--no-demos", "use_demos", default=False)
@click.option("--demo-mode", type=click.Choice(["uniform", "selective"]), default=None)
@click.option("--num-sets", type=int, default=None)
@click.option("--similarity-fraction", type=float, default=None)
@click.option("--shots", type=int, default=None)
@click.option("--dev-multiplier", type=int, default=None)
@click.option("--seeds", default=None, help="comma-separated split seeds")
@click.option("--steps", type=int, default=None)
@click.option("--eval-every", type=int, default=None)
@click.option("--vocab-size", type=int, default=None)
@click.option("--backend-seed", type=int, default=None)
@click.option("--test-fraction", type=float, default=None)
@click.option("--method-label", default=None)
@click.option("--output-dir", default=None)
@click.option("--workers", type=int, default=None)
@click.option("--timing", is_flag=True, default=False)
def run(config_path, dataset, prompt_name, prompt_file, prompt_source, regression, metric,
        use_demos, demo_mode, num_sets, similarity_fraction, shots, dev_multiplier, seeds,
        steps, eval_every, vocab_size, backend_seed, test_fraction, method_label,
        output_dir, workers, timing) -> None:
    """Run the full multi-seed protocol and append results to JSONL."""
    try:
        cfg = _load_config(config_path)
        dataset = _resolve(dataset, cfg, "task", "dataset", None)
        prompt_name = _resolve(prompt_name, cfg, "prompt", "name", None)
        prompt_source = _resolve(prompt_source, cfg, "prompt", "source", "manual")
        regression = _resolve(regression, cfg, "task", "regression", None)
        metric = _resolve(metric, cfg, "task", "metric", None)
        shots = _resolve(shots, cfg, "protocol", "shots", 16, int)
        dev_multiplier = _resolve(dev_multiplier, cfg, "protocol", "dev_multiplier", 1, int)
        steps = _resolve(steps, cfg, "protocol", "steps", 1000, int)
        eval_every = _resolve(eval_every, cfg, "protocol", "eval_every", 100, int)
        vocab_size = _resolve(vocab_size, cfg, "backend", "vocab_size", 200, int)
        backend_seed = _resolve(backend_seed, cfg, "backend", "seed", 7, int)
        test_fraction = _resolve(test_fraction, cfg, "task", "test_fraction", 0.2, float)
        seeds_text = _resolve(seeds, cfg, "protocol", "seeds", None)
        seed_list = tuple(int(s) for s in seeds_text.split(",")) if seeds_text else DEFAULT_SEEDS
        if not use_demos:
            use_demos = _cfg(cfg, "demos", "enabled", False, lambda v: v.lower() == "true")
        demo_mode = _resolve(demo_mode, cfg, "demos", "mode", "uniform")
        num_sets = _resolve(num_sets, cfg, "demos", "num_sets", 16, int)
        similarity_fraction = _resolve(similarity_fraction, cfg, "demos", "similarity_fraction", 0.5, float)

        out = _output_dir(_resolve(output_dir, cfg, "output", "dir", "runs"))
        task, examples = _load_task(dataset, regression, metric)
        pool, test_examples = _split_test(examples, test_fraction)
        prompt = _load_prompt(prompt_name, prompt_file)
        prompt.verbalizer.check_total(
            task.labels if task.labels else (task.regression.y_lower, task.regression.y_upper)
        )
        backend = _build_backend(examples, prompt, vocab_size, backend_seed)
        encoder = HashBagEncoder()
        demo_config = None
        if use_demos:
            demo_config = DemoConfig(
                similarity_fraction=similarity_fraction,
                num_sets=num_sets,
                sampling_mode=demo_mode,
            )
        pipeline = PromptPipeline(
            source=prompt_source,
            manual_prompt=prompt,
            backend=backend,
            task=task,
            generator=_toy_generator(prompt),
            encoder=encoder,
            demo_config=demo_config,
            artifact_dir=out / "artifacts",
        )
        jsonl_path = out / "results.jsonl"
        result = run_protocol(
            task,
            pool,
            test_examples,
            pipeline.method_factory(),
            shots_per_class=shots,
            seeds=seed_list,
            dev_multiplier=dev_multiplier,
            steps=steps,
            eval_every=eval_every,
            jsonl_path=jsonl_path,
            timing=timing,
            workers=_workers(workers),
        )
        click.echo(
            f"{method_label or pipeline.method_name()} on {task.name}: "
            f"{100 * result.mean:.1f} ({100 * result.std:.1f}) over "
            f"{result.completed_seeds} seed(s); results in {jsonl_path}"
        )
    except (PromptshotError, ValueError, OSError) as err:
        _fail(err)


def _toy_generator(prompt):
    """Toy span generator biased toward a plausible cloze frame.

    The bias table is keyed on prefixes only (wildcard conditioning), so
    beam search recovers the frame while still exploring alternatives.
    """
    words = sorted(set(_template_words(prompt)) | {"It", "was", "This", "is", "A", ".", ",", "!", "?"})
    vocab = ["<X>", "<Y>"] + words + ["</s>"]
    target = ["<X>", "It", "was", "<Y>", ".", "</s>"]
    ids = {w: i for i, w in enumerate(vocab)}
    table = {}
    for i, token in enumerate(target):
        probs = np.full(len(vocab), 0.1 / (len(vocab) - 1))
        probs[ids[token]] = 0.9
        table[(None, tuple(target[:i]))] = probs
    return ToyGenerator(vocab, table)


@main.command("search-labels")
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--prompt", "prompt_name", default=None)
@click.option("--prompt-file", type=click.Path(exists=True), default=None)
@click.option("--pruned-size", "-k", type=int, default=10)
@click.option("--num-assignments", "-n", type=int, default=20)
@click.option("--steps", type=int, default=50)
@click.option("--shots", type=int, default=16)
@click.option("--seed", type=int, default=13)
@click.option("--vocab-size", type=int, default=200)
@click.option("--backend-seed", type=int, default=7)
@click.option("--output-dir", default=None)
def search_labels(dataset, prompt_name, prompt_file, pruned_size, num_assignments, steps,
                  shots, seed, vocab_size, backend_seed, output_dir) -> None:
    """Search label words for a fixed template on one few-shot split."""
    try:
        out = _output_dir(output_dir)
        task, examples = _load_task(dataset, None, None)
        pool, _ = _split_test(examples, 0.2)
        prompt = _load_prompt(prompt_name, prompt_file)
        backend = _build_backend(examples, prompt, vocab_size, backend_seed)
        split = sample_split(task, pool, shots, seed)
        config = SearchConfig(pruned_size=pruned_size, num_assignments=num_assignments, steps=steps)
        best, candidates = search_label_words(
            prompt.template, task, list(split.train), list(split.dev), backend, config, seed=seed
        )
        path = out / "label_candidates.tsv"
        save_candidates(path, candidates)
        click.echo(f"best assignment: {best.assignment} (dev {best.dev_accuracy:.3f}); candidates in {path}")
    except (PromptshotError, ValueError, OSError) as err:
        _fail(err)


@main.command("search-templates")
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--prompt", "prompt_name", default=None)
@click.option("--prompt-file", type=click.Path(exists=True), default=None)
@click.option("--beam-width", type=int, default=20)
@click.option("--max-len", type=int, default=6)
@click.option("--shots", type=int, default=16)
@click.option("--seed", type=int, default=13)
@click.option("--output-dir", default=None)
def search_templates(dataset, prompt_name, prompt_file, beam_width, max_len, shots, seed, output_dir) -> None:
    """Generate template candidates from the manual label words."""
    try:
        out = _output_dir(output_dir)
        task, examples = _load_task(dataset, None, None)
        pool, _ = _split_test(examples, 0.2)
        prompt = _load_prompt(prompt_name, prompt_file)
        split = sample_split(task, pool, shots, seed)
        candidates = generate_template_candidates(
            list(split.train), prompt.verbalizer, _toy_generator(prompt), task,
            beam_width=beam_width, max_len=max_len,
        )
        path = out / "template_candidates.tsv"
        save_template_candidates(path, candidates)
        click.echo(f"{len(candidates)} template candidate(s) in {path}")
    except (PromptshotError, ValueError, OSError) as err:
        _fail(err)


@main.command()
@click.option("--kind", type=click.Choice(["majority", "zero_shot", "in_context", "head_finetune"]), required=True)
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--prompt", "prompt_name", default=None)
@click.option("--prompt-file", type=click.Path(exists=True), default=None)
@click.option("--num-random-demos", type=int, default=32)
@click.option("--shots", type=int, default=16)
@click.option("--seed", type=int, default=13)
@click.option("--vocab-size", type=int, default=200)
@click.option("--backend-seed", type=int, default=7)
@click.option("--test-fraction", type=float, default=0.2)
def baseline(kind, dataset, prompt_name, prompt_file, num_random_demos, shots, seed,
             vocab_size, backend_seed, test_fraction) -> None:
    """Score one baseline on one few-shot split."""
    try:
        task, examples = _load_task(dataset, None, None)
        pool, test_examples = _split_test(examples, test_fraction)
        prompt = _load_prompt(prompt_name, prompt_file)
        backend = _build_backend(examples, prompt, vocab_size, backend_seed)
        split = sample_split(task, pool, shots, seed)
        if kind == "head_finetune":
            method = HeadMethod(backend, task, head_seed=seed)
            best = grid_search(split, default_grid(), method, test_examples, seed=seed)
            metric = best.test_metric
        else:
            spec = BaselineSpec(kind, num_random_demos=num_random_demos)
            metric = run_baseline(spec, split, prompt, backend, task, test_examples, seed=seed)
        click.echo(f"{kind} {task.metric} on {task.name}: {100 * metric:.1f}")
    except (PromptshotError, ValueError, OSError) as err:
        _fail(err)


@main.command()
@click.option("--results", type=click.Path(exists=True), required=True, help="protocol JSONL file")
@click.option("--output-dir", default=None)
def report(results, output_dir) -> None:
    """Render the results table (markdown + CSV) and the score figure."""
    try:
        out = _output_dir(output_dir)
        paths = emit_report(load_records(results), out)
        for kind, path in paths.items():
            click.echo(f"{kind}: {path}")
    except (PromptshotError, ValueError, OSError) as err:
        _fail(err)


if __name__ == "__main__":
    main()
