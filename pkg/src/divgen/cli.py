"""Command-line entry point: generate, metrics, curate, train-proxy, serve, budget.

Every command reads its configuration from flags plus a task file, routes all
randomness through explicit seeds, and emits a JSON report to stdout or a
file, so sweep experiments stay scriptable and reproducible.
"""

from __future__ import annotations

import json
import sys
import time

import click
import numpy as np

from divgen import curation, demo, metrics as metrics_mod, pipeline
from divgen.mocklm import KeywordLabeler

OOS_STATE_OUT = pipeline.OOS_OUT_OF_SCOPE


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _load_task(path: str) -> pipeline.TaskSpec:
    try:
        return pipeline.load_task(path)
    except (OSError, KeyError, ValueError) as exc:
        raise click.ClickException(f"cannot load task file {path}: {exc}")


def _build_backend(task: pipeline.TaskSpec, backend_name: str, model: str, vocab_file: str | None):
    if backend_name == "mock":
        try:
            return demo.build_mock_backend(task)
        except ValueError as exc:
            raise click.ClickException(str(exc))
    from divgen.backends import OpenAICompletionBackend, VocabFileTokenizer

    tokenizer = VocabFileTokenizer(vocab_file) if vocab_file else None
    return OpenAICompletionBackend(model=model, tokenizer=tokenizer)


def _resolve_oracle(task: pipeline.TaskSpec, oracle_spec: str, embedder, sgd_seed: int = 0):
    if oracle_spec == "keyword":
        if not task.planted_keywords:
            raise click.ClickException("task has no planted keywords; use --oracle student:<reference>")
        return KeywordLabeler(demo.synthetic_task_from_spec_or_keywords(task))
    if oracle_spec.startswith("student:"):
        reference_path = oracle_spec[len("student:"):]
        reference, _ = pipeline.load_dataset(reference_path)
        return metrics_mod.train_student(reference, embedder, curation.SgdConfig(seed=sgd_seed))
    raise click.ClickException(f"unknown oracle {oracle_spec!r}; use 'keyword' or 'student:<path>'")


@click.group()
@click.version_option()
def main() -> None:
    """Diversified dataset generation with human-in-the-loop curation."""


@main.command()
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--backend", "backend_name", type=click.Choice(["mock", "openai"]), default="mock")
@click.option("--model", default="text-davinci-002", show_default=True)
@click.option("--vocab-file", type=click.Path(exists=True), default=None,
              help="Tokenizer vocabulary for remote logit-bias suppression.")
@click.option("--temperature", type=float, default=None, help="Override the task temperature.")
@click.option("--logit-suppression/--no-logit-suppression", default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--request-log", type=click.Path(), default=None)
@click.option("--resume", is_flag=True, help="Continue an interrupted run from its checkpoint.")
@click.option("--timestamps", is_flag=True,
              help="Record wall-clock timestamps (breaks byte-reproducibility).")
@click.option("--price", type=float, default=0.02, show_default=True, help="$ per 1k tokens.")
def generate(task_path, backend_name, model, vocab_file, temperature, logit_suppression,
             seed, out, request_log, resume, timestamps, price):
    """Generate a dataset and write it with its request log."""
    task = _load_task(task_path)
    if temperature is not None:
        if temperature <= 0:
            raise click.ClickException(f"temperature must be > 0, got {temperature}")
        task.temperature = temperature
    if logit_suppression is not None:
        task.logit_suppression = logit_suppression
    backend = _build_backend(task, backend_name, model, vocab_file)
    started = time.monotonic()
    try:
        dataset = pipeline.run_generation(
            task, backend, rng_seed=seed, out_path=out,
            request_log_path=request_log, resume=resume, include_timestamps=timestamps,
        )
    except pipeline.GenerationInterrupted as exc:
        raise click.ClickException(f"{exc} (resume with --resume)")
    usage = dataset.run_metadata.get("token_usage", {})
    total_tokens = usage.get("prompt_tokens", 0) + usage.get("completion_tokens", 0)
    _emit(
        {
            "dataset": out,
            "n_instances": len(dataset.instances),
            "per_label_counts": dataset.counts_by("specified_label"),
            "diversification": dataset.run_metadata["diversification"],
            "seed": seed,
            "token_usage": usage,
            "actual_cost": total_tokens * price / 1000.0,
            "budget_estimate": pipeline.estimate_budget(task, price),
            "runtime_seconds": round(time.monotonic() - started, 3),
        },
        None,
    )


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None)
@click.option("--task", "task_path", type=click.Path(exists=True), default=None,
              help="Task file providing the keyword evaluator for label accuracy.")
@click.option("--embedder", "embedder_name", default="hashed-ngram", show_default=True)
@click.option("--distance", type=click.Choice(["cosine", "euclidean"]), default="cosine")
@click.option("--out", type=click.Path(), default=None)
def metrics(dataset_path, reference_path, task_path, embedder_name, distance, out):
    """Quality report: diversity, similarity to a reference, label accuracy."""
    if embedder_name != "hashed-ngram":
        raise click.ClickException(f"unknown embedder {embedder_name!r}")
    dataset, _ = pipeline.load_dataset(dataset_path)
    reference = pipeline.load_dataset(reference_path)[0] if reference_path else None
    evaluator = None
    if task_path:
        task = _load_task(task_path)
        if task.planted_keywords:
            evaluator = KeywordLabeler(demo.synthetic_task_from_spec_or_keywords(task))
    report = metrics_mod.metrics_report(
        dataset, metrics_mod.HashedNGramEmbedder(), reference=reference,
        evaluator=evaluator, metric=distance,
    )
    _emit(report, out)


@main.group()
def curate() -> None:
    """Label replacement and out-of-scope filtering."""


@curate.command("lr")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["oracle", "proxy"]), required=True)
@click.option("--n", "n_inspected", type=int, default=90, show_default=True,
              help="Inspection budget in proxy mode (90/180/270 are the usual sweeps).")
@click.option("--w", "weight", type=float, default=0.3, show_default=True)
@click.option("--oracle", "oracle_spec", default="keyword", show_default=True,
              help="'keyword' or 'student:<reference dataset>'.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True,
              help="Proxy-mode repetitions with fresh samples; report aggregates.")
@click.option("--out", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
def curate_lr(dataset_path, task_path, mode, n_inspected, weight, oracle_spec, seed,
              repeats, out, report_path):
    """Replace labels with the oracle everywhere, or via proxy models."""
    task = _load_task(task_path)
    dataset, _ = pipeline.load_dataset(dataset_path)
    embedder = metrics_mod.HashedNGramEmbedder()
    oracle = _resolve_oracle(task, oracle_spec, embedder, sgd_seed=seed)
    started = time.monotonic()

    def one_pass(pass_seed: int) -> tuple[pipeline.Dataset, dict]:
        if mode == "oracle":
            replaced = curation.replace_labels(dataset, "oracle_all", oracle)
        else:
            replaced = curation.replace_labels(
                dataset, "proxy", oracle, embedder=embedder,
                n_inspected=n_inspected, weight=weight, rng_seed=pass_seed,
            )
        changed = sum(
            1 for a, b in zip(dataset.instances, replaced.instances)
            if a.current_label != b.current_label
        )
        accuracy = metrics_mod.label_accuracy(replaced, oracle)
        return replaced, {"labels_changed": changed, "label_accuracy_vs_oracle": accuracy}

    passes = [one_pass(seed + k) for k in range(repeats if mode == "proxy" else 1)]
    replaced = passes[0][0]
    pipeline.write_dataset(out, replaced)
    stats = [p[1] for p in passes]

    confusion: dict[str, dict[str, int]] = {label: {} for label in task.labels}
    for inst in replaced.instances:
        predicted = oracle.predict(inst.text)
        row = confusion.setdefault(predicted, {})
        row[inst.current_label] = row.get(inst.current_label, 0) + 1

    accuracies = [s["label_accuracy_vs_oracle"] for s in stats]
    ci_half_width = float(1.96 * np.std(accuracies) / np.sqrt(len(accuracies)))
    # reports carry no wall-clock or path fields so identical seeds give
    # byte-identical files; timing goes to stderr
    click.echo(f"curate lr finished in {time.monotonic() - started:.2f}s", err=True)
    report = {
        "mode": mode if mode == "oracle" else f"proxy(n={n_inspected})",
        "n_inspected": len(dataset.instances) if mode == "oracle" else n_inspected,
        "weight": weight if mode == "proxy" else None,
        "repeats": len(passes),
        "labels_changed": stats[0]["labels_changed"],
        "labels_changed_mean": float(np.mean([s["labels_changed"] for s in stats])),
        "label_accuracy_vs_oracle_mean": float(np.mean(accuracies)),
        "label_accuracy_vs_oracle_ci95": ci_half_width,
        "confusion_oracle_vs_current": confusion,
        "per_label_counts": replaced.counts_by("current_label"),
    }
    _emit(report, report_path)


@curate.command("oosf")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--annotations", "annotations_path", required=True, type=click.Path(exists=True),
              help="JSON list of {text, oos} records.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
def curate_oosf(dataset_path, annotations_path, threshold, seed, out, report_path):
    """Filter out-of-scope instances with a classifier trained on annotations."""
    dataset, _ = pipeline.load_dataset(dataset_path)
    with open(annotations_path, encoding="utf-8") as fh:
        records = json.load(fh)
    annotations = [(r["text"], bool(r["oos"])) for r in records]
    embedder = metrics_mod.HashedNGramEmbedder()
    started = time.monotonic()
    try:
        model = curation.train_oos_model(
            annotations, embedder, threshold=threshold, config=curation.SgdConfig(seed=seed)
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    filtered, filter_report = curation.filter_oos(dataset, model, embedder)
    pipeline.write_dataset(out, filtered)
    evaluation = curation.evaluate_oos_model(annotations, embedder, rng_seed=seed)
    click.echo(f"curate oosf finished in {time.monotonic() - started:.2f}s", err=True)
    _emit(
        {
            "mode": "oosf",
            "n_annotations": len(annotations),
            "oos_removed": filter_report["removed"],
            "oos_ratio": filter_report["ratio"],
            "proxy_eval": evaluation,
            "n_remaining": len(filtered.instances),
        },
        report_path,
    )


@main.command("train-proxy")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n_inspected", type=int, default=90, show_default=True)
@click.option("--oracle", "oracle_spec", default="keyword", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def train_proxy(dataset_path, task_path, n_inspected, oracle_spec, seed, out):
    """Inspect a sample with the oracle and train per-label proxy models."""
    task = _load_task(task_path)
    dataset, _ = pipeline.load_dataset(dataset_path)
    if n_inspected > len(dataset.instances):
        raise click.ClickException("--n exceeds the dataset size")
    embedder = metrics_mod.HashedNGramEmbedder()
    oracle = _resolve_oracle(task, oracle_spec, embedder, sgd_seed=seed)
    rng = np.random.default_rng(seed)
    picked = [dataset.instances[int(i)] for i in rng.permutation(len(dataset.instances))[:n_inspected]]
    inspected_ids = {inst.id for inst in picked}
    oracle_labels = {inst.id: oracle.predict(inst.text) for inst in picked}
    proxies = curation.train_proxies(dataset, inspected_ids, oracle_labels, embedder,
                                     curation.SgdConfig(seed=seed))
    positives = {
        label: sum(1 for v in oracle_labels.values() if v == label) for label in task.labels
    }
    _emit(
        {
            "n_inspected": n_inspected,
            "positives_per_label": positives,
            "stub_labels": [l for l, c in proxies.classifiers.items() if c is None],
            "embedder": proxies.embedder_id,
        },
        out,
    )


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8400, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ui-dir", type=click.Path(file_okay=False), default=None,
              help="Static frontend bundle to serve alongside the API.")
def serve(data_dir, host, port, seed, ui_dir):
    """Host the annotation service (and the web console, when built)."""
    import uvicorn

    from divgen.service import create_app

    app = create_app(data_dir, seed=seed, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--price", type=float, default=0.02, show_default=True, help="$ per 1k tokens.")
@click.option("--example-classes", "n_example_classes", type=int, default=None,
              help="Classes represented in the prompt examples; defaults to the label count.")
def budget(task_path, price, n_example_classes):
    """Worst-case generation cost for a task."""
    task = _load_task(task_path)
    n = len(task.labels) if n_example_classes is None else n_example_classes
    cost = pipeline.estimate_budget(task, price, n_example_classes=n)
    _emit(
        {
            "task": task.name,
            "target_count": task.target_count,
            "example_classes": n,
            "tokens_per_instance": (task.max_tokens + pipeline.PROMPT_OVERHEAD_TOKENS) * (n + 1),
            "price_per_1k_tokens": price,
            "cost": round(cost, 2),
        },
        None,
    )


@main.command("demo")
@click.option("--out", "directory", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def demo_cmd(directory, seed):
    """Materialize the bundled synthetic demo task and corpora."""
    task_path = demo.materialize_demo(directory, seed=seed)
    _emit({"task_file": task_path, "labels": demo.DEMO_LABELS}, None)


if __name__ == "__main__":
    sys.exit(main())
