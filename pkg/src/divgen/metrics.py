"""Dataset quality metrics over text embeddings.

Diversity is the remote-clique value: the average over points of the mean
distance to every other point. Similarity between a generated set and a
reference set is derived from the average distance over all cross pairs.
Label accuracy checks instances' labels against a trusted classifier, and a
lightweight linear student model stands in for fine-tuning when measuring
how useful a dataset is for training.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from divgen.curation import SgdConfig, sgd_train
from divgen.pipeline import Dataset

__all__ = [
    "HashedNGramEmbedder",
    "RemoteEmbedder",
    "cosine_distance_matrix",
    "euclidean_distance_matrix",
    "remote_clique_diversity",
    "cross_distance",
    "similarity_from_distance",
    "label_accuracy",
    "LinearStudentClassifier",
    "train_student",
    "evaluate_student",
    "metrics_report",
]


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...

    @property
    def embedder_id(self) -> str: ...


class HashedNGramEmbedder:
    """Deterministic text embedder: hashed character n-grams, n in {2, 3}.

    Each n-gram is keyed-hashed to one of ``dimension`` signed buckets and
    the resulting count vector is L2-normalized. Empty texts embed to the
    zero vector. No fitted state, so the same text always gets the same
    vector for a given (dimension, seed).
    """

    def __init__(self, dimension: int = 256, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)
        self._cache: dict[str, tuple[int, float]] = {}

    @property
    def embedder_id(self) -> str:
        return f"hashed-ngram-{self.dimension}-s{self.seed}"

    def _slot(self, gram: str) -> tuple[int, float]:
        cached = self._cache.get(gram)
        if cached is None:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
            value = int.from_bytes(digest, "little")
            cached = (value % self.dimension, 1.0 if (value >> 63) & 1 else -1.0)
            self._cache[gram] = cached
        return cached

    def embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        for n in (2, 3):
            for i in range(len(text) - n + 1):
                bucket, sign = self._slot(text[i : i + n])
                vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.embed_one(t) for t in texts]) if texts else np.zeros((0, self.dimension))


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Optional alternative to the local hashing embedder; nothing in the
    toolkit requires it. Bearer-token auth and base URL follow the same
    environment variables as the completion backend.
    """

    def __init__(self, model: str, base_url: str | None = None, api_key: str | None = None,
                 session=None, timeout: float = 60.0):
        import os

        self.model = model
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL")
                         or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("OPENAI_API_KEY", "")
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.timeout = timeout

    @property
    def embedder_id(self) -> str:
        return f"remote:{self.model}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0))
        response = self.session.post(
            f"{self.base_url}/embeddings",
            json={"model": self.model, "input": list(texts)},
            headers={"Authorization": f"Bearer {self.api_key}"},
            timeout=self.timeout,
        )
        if response.status_code >= 400:
            raise RuntimeError(f"embeddings endpoint returned HTTP {response.status_code}: {response.text}")
        rows = sorted(response.json()["data"], key=lambda r: r["index"])
        return np.asarray([r["embedding"] for r in rows], dtype=np.float64)


def _norms(vectors: np.ndarray) -> np.ndarray:
    return np.linalg.norm(vectors, axis=1)


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cosine similarity; zero vectors count as similar to
    nothing except other zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = _norms(a), _norms(b)
    denom = np.outer(na, nb)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, (a @ b.T) / np.where(denom > 0, denom, 1.0), 0.0)
    both_zero = np.outer(na == 0, nb == 0)
    sim = np.where(both_zero, 1.0, sim)
    return 1.0 - sim


def euclidean_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sqrt(np.maximum(0.0, ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)))


_METRICS = {"cosine": cosine_distance_matrix, "euclidean": euclidean_distance_matrix}


def remote_clique_diversity(vectors: np.ndarray, metric: str = "cosine") -> float:
    """Average over points of the mean distance to every other point."""
    vectors = np.asarray(vectors, dtype=np.float64)
    n = len(vectors)
    if n < 2:
        raise ValueError("remote-clique diversity needs at least 2 vectors")
    distances = _METRICS[metric](vectors, vectors)
    np.fill_diagonal(distances, 0.0)
    return float((distances.sum(axis=1) / (n - 1)).mean())


def cross_distance(
    generated: np.ndarray, reference: np.ndarray, metric: str = "cosine"
) -> float:
    """Mean distance over all pairs between the two sets."""
    generated = np.asarray(generated, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(generated) == 0 or len(reference) == 0:
        raise ValueError("cross distance needs two non-empty sets")
    return float(_METRICS[metric](generated, reference).mean())


def similarity_from_distance(distance: float) -> float:
    """Monotone display transform of a distance onto (0, 1]."""
    return 1.0 / (1.0 + distance)


def label_accuracy(dataset: Dataset, evaluator, which: str = "current") -> float:
    """Fraction of instances whose evaluator prediction matches their label.

    ``which`` selects the label column: "current" reflects any curation that
    has happened, "specified" is the raw generation-time label.
    """
    if which not in ("current", "specified"):
        raise ValueError("which must be 'current' or 'specified'")
    if not dataset.instances:
        raise ValueError("label accuracy of an empty dataset is undefined")
    attr = "current_label" if which == "current" else "specified_label"
    hits = sum(
        1 for inst in dataset.instances if evaluator.predict(inst.text) == getattr(inst, attr)
    )
    return hits / len(dataset.instances)


class LinearStudentClassifier:
    """One-vs-rest linear model over embeddings; the desk-scale student."""

    def __init__(self, labels: list[str], classifiers: dict, embedder: Embedder):
        self.labels = labels
        self.classifiers = classifiers
        self.embedder = embedder

    def predict(self, text: str) -> str:
        vec = self.embedder.embed([text])
        margins = [
            self.classifiers[label].margin(vec)[0] if self.classifiers[label] else -np.inf
            for label in self.labels
        ]
        return self.labels[int(np.argmax(margins))]

    def predict_many(self, texts: Sequence[str]) -> list[str]:
        vectors = self.embedder.embed(texts)
        margins = np.stack(
            [
                self.classifiers[label].margin(vectors)
                if self.classifiers[label]
                else np.full(len(texts), -np.inf)
                for label in self.labels
            ],
            axis=1,
        )
        return [self.labels[int(i)] for i in np.argmax(margins, axis=1)]


def train_student(
    dataset: Dataset, embedder: Embedder, config: SgdConfig | None = None
) -> LinearStudentClassifier:
    """Train the student on the dataset's current labels."""
    labels = sorted({inst.current_label for inst in dataset.instances})
    if len(labels) < 2:
        raise ValueError("student training needs at least 2 classes")
    config = config or SgdConfig()
    vectors = embedder.embed([inst.text for inst in dataset.instances])
    classifiers = {}
    for k, label in enumerate(labels):
        y = np.array([1 if inst.current_label == label else -1 for inst in dataset.instances])
        classifiers[label] = sgd_train(
            list(zip(vectors, y)),
            SgdConfig(l2=config.l2, max_iterations=config.max_iterations, seed=config.seed + k, tol=config.tol),
        )
    return LinearStudentClassifier(labels, classifiers, embedder)


def evaluate_student(classifier: LinearStudentClassifier, dataset: Dataset) -> float:
    """Accuracy of the student against the dataset's current labels."""
    if not dataset.instances:
        raise ValueError("cannot evaluate on an empty dataset")
    predicted = classifier.predict_many([inst.text for inst in dataset.instances])
    actual = [inst.current_label for inst in dataset.instances]
    return float(np.mean([p == a for p, a in zip(predicted, actual)]))


def metrics_report(
    dataset: Dataset,
    embedder: Embedder,
    reference: Dataset | None = None,
    evaluator=None,
    student: LinearStudentClassifier | None = None,
    metric: str = "cosine",
) -> dict:
    """The full quality report for one dataset as a JSON-ready dict."""
    vectors = embedder.embed([inst.text for inst in dataset.instances])
    report: dict = {
        "n_instances": len(dataset.instances),
        "per_label_counts": dataset.counts_by("current_label"),
        "diversity": remote_clique_diversity(vectors, metric) if len(vectors) >= 2 else None,
        "cross_distance": None,
        "similarity": None,
        "label_accuracy": None,
        "student_accuracy": None,
        "embedder": embedder.embedder_id,
        "distance_metric": metric,
    }
    if reference is not None and reference.instances:
        ref_vectors = embedder.embed([inst.text for inst in reference.instances])
        dist = cross_distance(vectors, ref_vectors, metric)
        report["cross_distance"] = dist
        report["similarity"] = similarity_from_distance(dist)
    if evaluator is not None:
        report["label_accuracy"] = label_accuracy(dataset, evaluator)
    if student is not None:
        report["student_accuracy"] = evaluate_student(student, dataset)
    return report
