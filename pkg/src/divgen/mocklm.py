"""Deterministic n-gram language model over synthetic keyword corpora.

Serves as an offline stand-in for a hosted LLM so the whole pipeline
(diversified generation, metrics, curation, annotation) can be exercised
and verified without network access. Texts are whitespace-tokenized over a
closed vocabulary; distributions use additive smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "UNK", "BOS", "EOS", "OOS",
    "NGramModel",
    "SyntheticTask",
    "KeywordLabeler",
    "fit_corpus",
    "fit_labeled_corpus",
    "next_distribution",
    "keyword_oracle",
]

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"

#: Sentinel returned by the keyword oracle when a text matches no label or
#: more than one label's keywords.
OOS = "<out-of-scope>"

Context = tuple[int, ...]


@dataclass
class NGramModel:
    """Order-k n-gram counts with additive smoothing, optionally per label."""

    order: int
    smoothing: float
    vocabulary: list[str]
    token_to_id: dict[str, int] = field(repr=False)
    # partition key None means a single unconditioned corpus
    partitions: dict[str | None, dict[Context, dict[int, int]]] = field(repr=False)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def encode(self, text: str) -> list[int]:
        unk = self.token_to_id[UNK]
        return [self.token_to_id.get(tok, unk) for tok in text.split()]

    def decode(self, token_ids: Sequence[int]) -> str:
        words = [self.vocabulary[t] for t in token_ids]
        return " ".join(w for w in words if w not in (BOS, EOS))

    def labels(self) -> list[str]:
        return [label for label in self.partitions if label is not None]


def _build_vocabulary(corpora: Sequence[Sequence[str]]) -> tuple[list[str], dict[str, int]]:
    words = sorted({tok for texts in corpora for text in texts for tok in text.split()})
    vocabulary = [UNK, BOS, EOS] + words
    return vocabulary, {tok: i for i, tok in enumerate(vocabulary)}


def _count_windows(
    texts: Sequence[str], order: int, token_to_id: dict[str, int]
) -> dict[Context, dict[int, int]]:
    counts: dict[Context, dict[int, int]] = {}
    bos, eos = token_to_id[BOS], token_to_id[EOS]
    for text in texts:
        ids = [bos] * (order - 1) + [token_to_id[tok] for tok in text.split()] + [eos]
        for i in range(order - 1, len(ids)):
            context = tuple(ids[i - order + 1 : i])
            nxt = counts.setdefault(context, {})
            nxt[ids[i]] = nxt.get(ids[i], 0) + 1
    return counts


def fit_corpus(texts: Sequence[str], order: int, smoothing: float = 1.0) -> NGramModel:
    """Fit a single-corpus model. Deterministic given identical inputs."""
    if not texts:
        raise ValueError("cannot fit an n-gram model on an empty corpus")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    vocabulary, token_to_id = _build_vocabulary([texts])
    return NGramModel(
        order=order,
        smoothing=smoothing,
        vocabulary=vocabulary,
        token_to_id=token_to_id,
        partitions={None: _count_windows(texts, order, token_to_id)},
    )


def fit_labeled_corpus(
    corpus: Mapping[str, Sequence[str]], order: int, smoothing: float = 1.0
) -> NGramModel:
    """Fit one n-gram partition per label over a shared vocabulary."""
    if not corpus or any(not texts for texts in corpus.values()):
        raise ValueError("every label needs a non-empty corpus")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    vocabulary, token_to_id = _build_vocabulary(list(corpus.values()))
    partitions = {
        label: _count_windows(texts, order, token_to_id) for label, texts in corpus.items()
    }
    return NGramModel(
        order=order,
        smoothing=smoothing,
        vocabulary=vocabulary,
        token_to_id=token_to_id,
        partitions=partitions,
    )


def next_distribution(
    model: NGramModel, context: Sequence[int | str], label: str | None = None
) -> np.ndarray:
    """Smoothed next-token distribution for a context, conditioned on a label.

    The context is the most recent token sequence (ids or raw words); only
    the last order-1 tokens matter and shorter contexts are padded with the
    start marker. With smoothing constant a, a token seen c times after a
    context seen n times gets probability (c + a) / (n + a * V).
    """
    if label not in model.partitions:
        raise ValueError(f"unknown label {label!r}; model has {sorted(model.partitions, key=str)}")
    ids = [model.token_to_id.get(t, model.token_to_id[UNK]) if isinstance(t, str) else int(t) for t in context]
    width = model.order - 1
    bos = model.token_to_id[BOS]
    window = [bos] * max(0, width - len(ids)) + ids[-width:] if width else []
    key: Context = tuple(window)
    probs = np.full(model.vocab_size, model.smoothing, dtype=np.float64)
    for token_id, count in model.partitions[label].get(key, {}).items():
        probs[token_id] += count
    total = probs.sum()
    if total <= 0:
        # unsmoothed model queried on an unseen context: nothing observed, be uniform
        return np.full(model.vocab_size, 1.0 / model.vocab_size)
    return probs / total


@dataclass
class SyntheticTask:
    """Label set with disjoint planted keywords and per-label corpora.

    Every corpus text of a label contains at least one of that label's
    keywords, which makes keyword lookup an exact labeler for data drawn
    from the corpora.
    """

    labels: list[str]
    planted_keywords: dict[str, set[str]]
    corpus: dict[str, list[str]]

    def __post_init__(self) -> None:
        for i, a in enumerate(self.labels):
            for b in self.labels[i + 1 :]:
                overlap = self.planted_keywords[a] & self.planted_keywords[b]
                if overlap:
                    raise ValueError(f"keywords overlap between {a!r} and {b!r}: {overlap}")
        for label, texts in self.corpus.items():
            keywords = self.planted_keywords[label]
            for text in texts:
                if not keywords & set(text.split()):
                    raise ValueError(f"corpus text for {label!r} has no planted keyword: {text!r}")


def keyword_oracle(task: SyntheticTask, text: str) -> str:
    """Label a text by planted keywords; OOS when zero or several labels match."""
    tokens = set(text.lower().split())
    hits = [label for label in task.labels if task.planted_keywords[label] & tokens]
    if len(hits) == 1:
        return hits[0]
    return OOS


class KeywordLabeler:
    """Keyword-based classifier that always answers with a task label.

    Unlike the oracle, out-of-scope texts are forced onto a label (most
    keyword hits, ties and misses falling back to the first task label) so
    the object can stand in wherever a total classifier is required.
    """

    def __init__(self, task: SyntheticTask):
        self.task = task
        self.labels = list(task.labels)

    def predict(self, text: str) -> str:
        tokens = set(text.lower().split())
        best, best_hits = self.labels[0], 0
        for label in self.labels:
            hits = len(self.task.planted_keywords[label] & tokens)
            if hits > best_hits:
                best, best_hits = label, hits
        return best
