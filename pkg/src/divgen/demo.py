"""Bundled synthetic demo task: four emotion labels with planted keywords.

The corpora are built from a small template grammar so that every text
contains exactly one label keyword. That makes keyword lookup an exact
labeler, which in turn lets the whole pipeline (generation, metrics, label
replacement, out-of-scope filtering, annotation service) be demonstrated and
verified offline against known ground truth.
"""

from __future__ import annotations

import os

import numpy as np

from divgen.backends import MockCompletionBackend
from divgen.mocklm import NGramModel, SyntheticTask, fit_labeled_corpus
from divgen.pipeline import TaskSpec, save_task

__all__ = [
    "DEMO_LABELS",
    "DEMO_KEYWORDS",
    "build_demo_corpus",
    "build_demo_task",
    "build_mock_backend",
    "synthetic_task_from_spec",
    "materialize_demo",
]

DEMO_LABELS = ["joy", "anger", "fear", "sadness"]

DEMO_KEYWORDS: dict[str, list[str]] = {
    "joy": ["delighted", "thrilled", "joyful", "cheerful", "beaming"],
    "anger": ["furious", "outraged", "seething", "fuming", "livid"],
    "fear": ["terrified", "anxious", "trembling", "dreading", "spooked"],
    "sadness": ["heartbroken", "gloomy", "weeping", "mournful", "sorrowful"],
}

_OPENERS = ["i am", "i feel", "today i am", "honestly i feel", "right now i am", "somehow i feel"]
_MIDDLES = ["about the", "because of the", "after the", "over the", "during the"]
_TOPICS = [
    "news", "game", "meeting", "trip", "exam", "party",
    "storm", "movie", "deadline", "reunion", "concert", "match",
]
_CLOSERS = ["this morning", "tonight", "all week", "once more", "with my friends", "at home", ""]


def build_demo_corpus(seed: int = 0, lines_per_label: int = 100) -> SyntheticTask:
    """Sample per-label corpora from the template grammar."""
    corpus: dict[str, list[str]] = {}
    for k, label in enumerate(DEMO_LABELS):
        rng = np.random.default_rng([seed, k])
        lines: list[str] = []
        seen: set[str] = set()
        while len(lines) < lines_per_label:
            parts = [
                _OPENERS[rng.integers(len(_OPENERS))],
                DEMO_KEYWORDS[label][rng.integers(len(DEMO_KEYWORDS[label]))],
                _MIDDLES[rng.integers(len(_MIDDLES))],
                _TOPICS[rng.integers(len(_TOPICS))],
                _CLOSERS[rng.integers(len(_CLOSERS))],
            ]
            line = " ".join(p for p in parts if p)
            if line not in seen:
                seen.add(line)
                lines.append(line)
        corpus[label] = lines
    return SyntheticTask(
        labels=list(DEMO_LABELS),
        planted_keywords={label: set(words) for label, words in DEMO_KEYWORDS.items()},
        corpus=corpus,
    )


def build_demo_task(
    target_count: int = 400,
    temperature: float = 0.9,
    logit_suppression: bool = False,
    corpus_files: dict[str, str] | None = None,
) -> TaskSpec:
    return TaskSpec(
        name="demo-emotions",
        text_type="mood message",
        labels=list(DEMO_LABELS),
        label_phrases={label: f"expressing {label}" for label in DEMO_LABELS},
        target_count=target_count,
        batch_size=20,
        temperature=temperature,
        logit_suppression=logit_suppression,
        max_tokens=12,
        mock_corpus_files=corpus_files,
        mock_order=3,
        mock_smoothing=0.01,
        planted_keywords={label: sorted(words) for label, words in DEMO_KEYWORDS.items()},
    )


def synthetic_task_from_spec(task: TaskSpec) -> SyntheticTask:
    """Reconstruct the keyword task from a task spec with corpus files."""
    if task.mock_corpus_files is None or task.planted_keywords is None:
        raise ValueError(f"task {task.name!r} carries no synthetic corpus definition")
    corpus = {}
    for label, path in task.mock_corpus_files.items():
        with open(path, encoding="utf-8") as fh:
            corpus[label] = [line.strip() for line in fh if line.strip()]
    return SyntheticTask(
        labels=list(task.labels),
        planted_keywords={label: set(words) for label, words in task.planted_keywords.items()},
        corpus=corpus,
    )


def synthetic_task_from_spec_or_keywords(task: TaskSpec) -> SyntheticTask:
    """Keyword task for labeling only; corpora are optional."""
    if task.planted_keywords is None:
        raise ValueError(f"task {task.name!r} has no planted keywords")
    if task.mock_corpus_files:
        return synthetic_task_from_spec(task)
    return SyntheticTask(
        labels=list(task.labels),
        planted_keywords={label: set(words) for label, words in task.planted_keywords.items()},
        corpus={label: [] for label in task.labels},
    )


def build_mock_backend(
    task: TaskSpec, synthetic: SyntheticTask | None = None
) -> MockCompletionBackend:
    """Fit the n-gram model for a task and wrap it as a completion backend."""
    if synthetic is None:
        synthetic = synthetic_task_from_spec(task)
    model: NGramModel = fit_labeled_corpus(
        synthetic.corpus, order=task.mock_order, smoothing=task.mock_smoothing
    )
    phrase_to_label = {phrase: label for label, phrase in task.label_phrases.items()}
    return MockCompletionBackend(model, phrase_to_label)


def materialize_demo(directory: str, seed: int = 0) -> str:
    """Write the demo task config and corpus files; returns the task path."""
    os.makedirs(directory, exist_ok=True)
    synthetic = build_demo_corpus(seed=seed)
    corpus_files = {}
    for label, lines in synthetic.corpus.items():
        path = os.path.join(directory, f"corpus-{label}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        corpus_files[label] = f"corpus-{label}.txt"
    task = build_demo_task(corpus_files=corpus_files)
    task_path = os.path.join(directory, "demo-emotions.task.json")
    save_task(task_path, task)
    return task_path
