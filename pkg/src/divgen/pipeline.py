"""Iterative dataset generation: prompts, label cycling, suppression, budget.

One run repeatedly picks the least-generated label, renders a prompt with one
example per label drawn from the pool (zero-shot during the first cycle when
unseeded), requests a batch of completions, and appends the cleaned texts as
labeled instances. When logit suppression is on, each request carries bias
weights computed from the cumulative token ledger of all prior batches.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from divgen.backends import CompletionRequest, request_record
from divgen.sampling import FrequencyLedger, SamplingParams, compute_suppression_bias

__all__ = [
    "TaskSpec",
    "DataInstance",
    "Dataset",
    "ExamplePool",
    "GenerationInterrupted",
    "render_prompt",
    "next_label",
    "select_examples",
    "run_generation",
    "estimate_budget",
    "sample_seed_examples",
    "parse_completion",
    "write_dataset",
    "load_dataset",
    "load_task",
    "save_task",
]

logger = logging.getLogger(__name__)

EXAMPLE_SEPARATOR = "\n\n- - - - -\n\n"

# token overhead of the instructional prompt, on top of the generation budget
PROMPT_OVERHEAD_TOKENS = 30

OOS_UNKNOWN = "unknown"
OOS_IN_SCOPE = "in_scope"
OOS_OUT_OF_SCOPE = "out_of_scope"


@dataclass
class TaskSpec:
    """Everything needed to generate one dataset for one classification task."""

    name: str
    text_type: str
    labels: list[str]
    label_phrases: dict[str, str]
    prompt_template: str = "A"
    target_count: int = 400
    batch_size: int = 20
    seed_examples: list[tuple[str, str]] = field(default_factory=list)
    logit_suppression: bool = False
    temperature: float = 1.0
    top_p: float = 1.0
    frequency_penalty: float = 0.02
    max_tokens: int = 100
    # optional synthetic-task attachments for the mock backend / oracle
    mock_corpus_files: dict[str, str] | None = None
    mock_order: int = 3
    mock_smoothing: float = 1.0
    planted_keywords: dict[str, list[str]] | None = None

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise ValueError("a task needs at least 2 labels")
        missing = [l for l in self.labels if l not in self.label_phrases]
        if missing:
            raise ValueError(f"labels without prompt phrases: {missing}")
        if self.prompt_template not in ("A", "C"):
            raise ValueError(f"prompt_template must be 'A' or 'C', got {self.prompt_template!r}")
        if self.target_count < self.batch_size:
            raise ValueError("target_count must be >= batch_size")
        bad = [lab for _, lab in self.seed_examples if lab not in self.labels]
        if bad:
            raise ValueError(f"seed examples carry unknown labels: {bad}")

    def sampling_params(self, rng_seed: int = 0) -> SamplingParams:
        return SamplingParams(
            temperature=self.temperature,
            top_p=self.top_p,
            frequency_penalty=self.frequency_penalty,
            max_tokens=self.max_tokens,
            rng_seed=rng_seed,
        )


@dataclass
class DataInstance:
    id: str
    text: str
    specified_label: str
    current_label: str
    oos_state: str = OOS_UNKNOWN
    source: str = "generated"
    iteration: int = 0
    label_provenance: str = "specified"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "specified_label": self.specified_label,
            "current_label": self.current_label,
            "oos_state": self.oos_state,
            "source": self.source,
            "iteration": self.iteration,
            "label_provenance": self.label_provenance,
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "DataInstance":
        return cls(**{k: record[k] for k in (
            "id", "text", "specified_label", "current_label",
            "oos_state", "source", "iteration", "label_provenance",
        )})


@dataclass
class Dataset:
    task_name: str
    instances: list[DataInstance]
    run_metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [inst.id for inst in self.instances]
        if len(ids) != len(set(ids)):
            raise ValueError("dataset has duplicate instance ids")

    def labels_in_use(self) -> list[str]:
        return sorted({inst.specified_label for inst in self.instances})

    def counts_by(self, attr: str = "specified_label") -> dict[str, int]:
        counts: dict[str, int] = {}
        for inst in self.instances:
            key = getattr(inst, attr)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def copy(self) -> "Dataset":
        return Dataset(
            task_name=self.task_name,
            instances=[DataInstance(**inst.to_dict()) for inst in self.instances],
            run_metadata=json.loads(json.dumps(self.run_metadata)),
        )


@dataclass
class ExamplePool:
    by_label: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def add(self, text: str, label: str) -> None:
        self.by_label.setdefault(label, []).append((text, label))

    def size(self, label: str) -> int:
        return len(self.by_label.get(label, []))


class GenerationInterrupted(RuntimeError):
    """Backend gave up mid-run; a resumable checkpoint was written."""

    def __init__(self, message: str, checkpoint_path: str | None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def _capitalize(text_type: str) -> str:
    return text_type[:1].upper() + text_type[1:]


def _render_block(task: TaskSpec, label: str, text: str | None) -> str:
    phrase = task.label_phrases[label]
    if task.prompt_template == "A":
        head = (
            f"Write a {task.text_type} to cover all following elements\n"
            f"Elements: {phrase}\n"
        )
    else:
        head = (
            f"Show me a {task.text_type} that has the following characteristics\n"
            f"Characteristics: {phrase}\n"
        )
    tail = f'{_capitalize(task.text_type)}: "'
    if text is None:
        return head + tail
    return head + tail + text + '"'


def render_prompt(
    task: TaskSpec, target_label: str, examples: Sequence[tuple[str, str]] = ()
) -> str:
    """Render an instruction prompt: example blocks, then the target block.

    Blocks share one template and are separated by a dash delimiter line; the
    target block stops at the opening quote so the model continues with the
    text itself.
    """
    if target_label not in task.labels:
        raise ValueError(f"unknown target label {target_label!r}")
    for _, label in examples:
        if label not in task.labels:
            raise ValueError(f"example carries unknown label {label!r}")
    blocks = [_render_block(task, label, text) for text, label in examples]
    blocks.append(_render_block(task, target_label, None))
    return EXAMPLE_SEPARATOR.join(blocks)


def next_label(counts: Mapping[str, int], labels: Sequence[str]) -> str:
    """Label with the fewest generated instances; ties go to task label order."""
    return min(labels, key=lambda lab: (counts.get(lab, 0), labels.index(lab)))


def select_examples(
    pool: ExamplePool,
    cycle_index: int,
    seeded: bool,
    labels: Sequence[str],
    rng: np.random.Generator,
) -> list[tuple[str, str]]:
    """One uniformly random example per label, or none during an unseeded first cycle."""
    if cycle_index == 0 and not seeded:
        return []
    picked: list[tuple[str, str]] = []
    for label in labels:
        candidates = pool.by_label.get(label, [])
        if not candidates:
            logger.info("no examples available yet for label %r; skipping its example", label)
            continue
        picked.append(candidates[int(rng.integers(len(candidates)))])
    return picked


def parse_completion(text: str) -> str | None:
    """Clean one returned completion; None when too short to keep."""
    idx = text.find('"')
    if idx != -1:
        text = text[:idx]
    text = text.strip()
    if len(text) < 3:
        return None
    return text


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dataset_lines(dataset: Dataset, checkpoint: dict | None = None) -> list[str]:
    header: dict = {"run_metadata": dataset.run_metadata}
    if checkpoint is not None:
        header["checkpoint"] = checkpoint
    lines = [_dumps(header)]
    lines.extend(_dumps(inst.to_dict()) for inst in dataset.instances)
    return lines


def write_dataset(path: str, dataset: Dataset, checkpoint: dict | None = None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in dataset_lines(dataset, checkpoint):
            fh.write(line + "\n")
    os.replace(tmp, path)


def load_dataset(path: str) -> tuple[Dataset, dict | None]:
    """Read a dataset file; returns the dataset and any checkpoint state."""
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"empty dataset file: {path}")
    header = json.loads(lines[0])
    instances = [DataInstance.from_dict(json.loads(line)) for line in lines[1:]]
    metadata = header.get("run_metadata", {})
    dataset = Dataset(
        task_name=metadata.get("task", ""), instances=instances, run_metadata=metadata
    )
    return dataset, header.get("checkpoint")


def _build_pool(task: TaskSpec, instances: Sequence[DataInstance]) -> ExamplePool:
    pool = ExamplePool()
    for text, label in task.seed_examples:
        pool.add(text, label)
    for inst in instances:
        if inst.source == "generated":
            pool.add(inst.text, inst.specified_label)
    return pool


def run_generation(
    task: TaskSpec,
    backend,
    rng_seed: int = 0,
    out_path: str | None = None,
    request_log_path: str | None = None,
    resume: bool = False,
    include_timestamps: bool = False,
) -> Dataset:
    """Generate a dataset of task.target_count labeled instances.

    Deterministic for a given (task, seed, backend): every random draw flows
    from the seed, including the per-request sampling seeds handed to the
    backend. With ``out_path`` set, a checkpoint is rewritten after every
    batch so an aborted run can resume without regenerating anything.
    """
    rng = np.random.default_rng(rng_seed)
    ledger = FrequencyLedger()
    counts: dict[str, int] = {label: 0 for label in task.labels}
    batches_done = 0
    usage = {"prompt_tokens": 0, "completion_tokens": 0}
    dropped_completions = 0
    instances: list[DataInstance] = [
        DataInstance(
            id=f"{task.name}-seed-{i:04d}",
            text=text,
            specified_label=label,
            current_label=label,
            source="seed",
            iteration=0,
        )
        for i, (text, label) in enumerate(task.seed_examples)
    ]

    run_metadata = {
        "task": task.name,
        "labels": list(task.labels),
        "seed": rng_seed,
        "backend": getattr(backend, "backend_id", "unknown"),
        "diversification": {
            "logit_suppression": task.logit_suppression,
            "temperature": task.temperature,
        },
        "target_count": task.target_count,
        "batch_size": task.batch_size,
    }
    if include_timestamps:
        run_metadata["started_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()

    if resume:
        if not out_path:
            raise ValueError("resume requires out_path")
        dataset, checkpoint = load_dataset(out_path)
        if checkpoint is None:
            logger.info("nothing to resume: %s holds a completed run", out_path)
            return dataset
        instances = dataset.instances
        run_metadata = dataset.run_metadata
        counts = {label: 0 for label in task.labels}
        for inst in instances:
            if inst.source == "generated":
                counts[inst.specified_label] += 1
        ledger = FrequencyLedger(
            counts={int(t): c for t, c in checkpoint["ledger"].items()},
            total=checkpoint["ledger_total"],
        )
        batches_done = checkpoint["batches_done"]
        usage = checkpoint.get("usage", usage)
        dropped_completions = checkpoint.get("dropped_completions", 0)
        state = checkpoint["rng_state"]
        state["state"] = {k: int(v) for k, v in state["state"].items()}
        rng.bit_generator.state = state

    pool = _build_pool(task, instances)
    seeded = bool(task.seed_examples)
    unbiasable = getattr(backend, "unbiasable_token_ids", set())
    log_fh = open(request_log_path, "a" if resume else "w", encoding="utf-8") if request_log_path else None

    def generated_total() -> int:
        return sum(counts.values())

    def save_checkpoint(rng_state: dict) -> None:
        if not out_path:
            return
        checkpoint = {
            "ledger": {str(t): c for t, c in ledger.counts.items()},
            "ledger_total": ledger.total,
            "batches_done": batches_done,
            "usage": usage,
            "dropped_completions": dropped_completions,
            "rng_state": rng_state,
        }
        write_dataset(out_path, Dataset(task.name, instances, run_metadata), checkpoint)

    try:
        stall_guard = 0
        while generated_total() < task.target_count:
            # resuming must replay this batch's random draws, so remember the
            # generator state from before they happen
            state_before_batch = rng.bit_generator.state
            label = next_label(counts, task.labels)
            cycle_index = batches_done // len(task.labels)
            examples = select_examples(pool, cycle_index, seeded, task.labels, rng)
            bias = {}
            if task.logit_suppression:
                bias = compute_suppression_bias(ledger)
                for token_id in unbiasable:
                    bias.pop(token_id, None)
            request = CompletionRequest(
                prompt=render_prompt(task, label, examples),
                n_completions=min(task.batch_size, task.target_count - generated_total()),
                params=task.sampling_params(rng_seed=int(rng.integers(2**63))),
                logit_bias=bias,
            )
            try:
                response = backend.complete(request)
            except Exception as exc:
                save_checkpoint(state_before_batch)
                raise GenerationInterrupted(
                    f"backend failed at batch {batches_done}: {exc}", out_path
                ) from exc

            if log_fh:
                log_fh.write(_dumps(request_record(batches_done, request, response)) + "\n")
                log_fh.flush()
            usage["prompt_tokens"] += response.prompt_tokens
            usage["completion_tokens"] += response.completion_tokens

            for text in response.texts:
                ledger.update(backend.tokenize_for_ledger(text))
            kept = 0
            for j, text in enumerate(response.texts):
                cleaned = parse_completion(text)
                if cleaned is None:
                    dropped_completions += 1
                    continue
                instances.append(
                    DataInstance(
                        id=f"{task.name}-{batches_done + 1:04d}-{j:02d}",
                        text=cleaned,
                        specified_label=label,
                        current_label=label,
                        iteration=batches_done + 1,
                    )
                )
                pool.add(cleaned, label)
                kept += 1
            counts[label] += kept
            batches_done += 1
            stall_guard = stall_guard + 1 if kept == 0 else 0
            if stall_guard >= 5 * len(task.labels):
                raise RuntimeError("generation stalled: batches keep producing no usable text")
            save_checkpoint(rng.bit_generator.state)
    finally:
        if log_fh:
            log_fh.close()

    if include_timestamps:
        run_metadata["finished_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    run_metadata["token_usage"] = dict(usage)
    run_metadata["dropped_completions"] = dropped_completions
    dataset = Dataset(task.name, instances, run_metadata)
    if out_path:
        write_dataset(out_path, dataset, checkpoint=None)
    return dataset


def estimate_budget(
    task: TaskSpec, price_per_1k_tokens: float, n_example_classes: int | None = None
) -> float:
    """Worst-case generation cost in dollars.

    Each instance costs up to (max_tokens + 30) tokens for every block in the
    prompt: one block per example class plus the target block. With the
    default 100-token budget this is 130 x (n + 1) tokens per instance.
    """
    n = len(task.labels) if n_example_classes is None else n_example_classes
    tokens_per_instance = (task.max_tokens + PROMPT_OVERHEAD_TOKENS) * (n + 1)
    return task.target_count * tokens_per_instance * price_per_1k_tokens / 1000.0


def sample_seed_examples(
    examples: Sequence[tuple[str, str]],
    labels: Sequence[str],
    rng: np.random.Generator,
    n_seeds: int | None = None,
) -> list[tuple[str, str]]:
    """Label-balanced random draw of seed examples from reference data.

    Defaults to 18 seeds, or 15 for five-label tasks so the split stays even.
    """
    if n_seeds is None:
        n_seeds = 15 if len(labels) == 5 else 18
    by_label: dict[str, list[tuple[str, str]]] = {label: [] for label in labels}
    for text, label in examples:
        if label in by_label:
            by_label[label].append((text, label))
    quota, remainder = divmod(n_seeds, len(labels))
    picked: list[tuple[str, str]] = []
    for i, label in enumerate(labels):
        want = quota + (1 if i < remainder else 0)
        candidates = by_label[label]
        if len(candidates) < want:
            raise ValueError(f"not enough reference examples for label {label!r}")
        idx = rng.choice(len(candidates), size=want, replace=False)
        picked.extend(candidates[int(k)] for k in idx)
    return picked


def _task_to_dict(task: TaskSpec) -> dict:
    data = {
        "name": task.name,
        "text_type": task.text_type,
        "labels": task.labels,
        "label_phrases": task.label_phrases,
        "prompt_template": task.prompt_template,
        "target_count": task.target_count,
        "batch_size": task.batch_size,
        "seed_examples": [{"text": t, "label": l} for t, l in task.seed_examples],
        "diversification": {
            "logit_suppression": task.logit_suppression,
            "temperature": task.temperature,
        },
        "sampling": {
            "top_p": task.top_p,
            "frequency_penalty": task.frequency_penalty,
            "max_tokens": task.max_tokens,
        },
    }
    if task.mock_corpus_files is not None:
        data["mock"] = {
            "corpus_files": task.mock_corpus_files,
            "order": task.mock_order,
            "smoothing": task.mock_smoothing,
        }
    if task.planted_keywords is not None:
        data["planted_keywords"] = task.planted_keywords
    return data


def save_task(path: str, task: TaskSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_task_to_dict(task), fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_task(path: str) -> TaskSpec:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    div = data.get("diversification", {})
    samp = data.get("sampling", {})
    mock = data.get("mock")
    corpus_files = None
    if mock is not None:
        base = os.path.dirname(os.path.abspath(path))
        corpus_files = {
            label: p if os.path.isabs(p) else os.path.join(base, p)
            for label, p in mock["corpus_files"].items()
        }
    return TaskSpec(
        name=data["name"],
        text_type=data["text_type"],
        labels=list(data["labels"]),
        label_phrases=dict(data["label_phrases"]),
        prompt_template=data.get("prompt_template", "A"),
        target_count=data.get("target_count", 400),
        batch_size=data.get("batch_size", 20),
        seed_examples=[(e["text"], e["label"]) for e in data.get("seed_examples", [])],
        logit_suppression=bool(div.get("logit_suppression", False)),
        temperature=float(div.get("temperature", 1.0)),
        top_p=float(samp.get("top_p", 1.0)),
        frequency_penalty=float(samp.get("frequency_penalty", 0.02)),
        max_tokens=int(samp.get("max_tokens", 100)),
        mock_corpus_files=corpus_files,
        mock_order=int(mock["order"]) if mock else 3,
        mock_smoothing=float(mock["smoothing"]) if mock else 1.0,
        planted_keywords={k: list(v) for k, v in data["planted_keywords"].items()}
        if "planted_keywords" in data
        else None,
    )
