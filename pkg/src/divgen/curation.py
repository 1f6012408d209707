"""Dataset repair: label replacement and out-of-scope filtering.

Label replacement (LR) either relabels every instance with a trusted labeler
or inspects a small sample, trains one binary proxy classifier per label on
the inspected instances, and relabels the rest by blending the proxy
confidence with the label named at generation time:

    final = specified_indicator * weight + proxy_confidence * (1 - weight)

Out-of-scope filtering (OOSF) trains a binary in-scope/out-of-scope
classifier on a small annotated sample and drops instances it flags.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from divgen.pipeline import DataInstance, Dataset, OOS_IN_SCOPE, OOS_OUT_OF_SCOPE

__all__ = [
    "LinearBinaryClassifier",
    "SgdConfig",
    "ProxyModelSet",
    "OOSModel",
    "sgd_train",
    "hinge_objective",
    "train_proxies",
    "final_score",
    "replace_labels",
    "train_oos_model",
    "evaluate_oos_model",
    "filter_oos",
    "balanced_subsample",
]

logger = logging.getLogger(__name__)

DEFAULT_SPECIFIED_WEIGHT = 0.3


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...

    @property
    def embedder_id(self) -> str: ...


class Labeler(Protocol):
    def predict(self, text: str) -> str: ...


@dataclass
class LinearBinaryClassifier:
    """Linear decision function with a logistic confidence squash."""

    weights: np.ndarray
    bias: float
    calibration_scale: float = 1.0

    def margin(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weights + self.bias

    def confidence(self, x: np.ndarray) -> np.ndarray:
        """Positive-class confidence, clamped strictly inside (0, 1)."""
        z = self.margin(x) / self.calibration_scale
        out = np.empty_like(z, dtype=np.float64)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return np.clip(out, 1e-15, 1.0 - 1e-15)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.margin(x) >= 0, 1, -1)


@dataclass
class SgdConfig:
    l2: float = 1e-4
    max_iterations: int = 10_000
    seed: int = 0
    tol: float = 1e-6


def hinge_objective(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray, bias: float, l2: float
) -> float:
    margins = y * (X @ weights + bias)
    return float(l2 / 2 * weights @ weights + np.mean(np.maximum(0.0, 1.0 - margins)))


def sgd_train(
    examples: Sequence[tuple[np.ndarray, int]], config: SgdConfig | None = None
) -> LinearBinaryClassifier:
    """Train a linear classifier by stochastic subgradient descent.

    Minimizes L2-regularized hinge loss with step size 1/(l2 * t) and a
    norm projection for stability. Stops after max_iterations update steps
    or when the full objective improves by less than tol over an epoch.
    Deterministic given the config seed.
    """
    config = config or SgdConfig()
    X = np.asarray([np.asarray(x, dtype=np.float64) for x, _ in examples])
    y = np.asarray([label for _, label in examples], dtype=np.float64)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training data must contain both classes")
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be +1 or -1")

    m, dim = X.shape
    lam = config.l2
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(config.seed)
    w = np.zeros(dim)
    b = 0.0
    t = 0
    prev_loss = np.inf
    while t < config.max_iterations:
        for i in rng.permutation(m):
            t += 1
            eta = 1.0 / (lam * t)
            w *= 1.0 - eta * lam
            if y[i] * (X[i] @ w + b) < 1.0:
                w += eta * y[i] * X[i]
                b += eta * y[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
            if t >= config.max_iterations:
                break
        loss = hinge_objective(X, y, w, b, lam)
        if abs(prev_loss - loss) < config.tol:
            break
        prev_loss = loss
    return LinearBinaryClassifier(weights=w, bias=float(b))


@dataclass
class ProxyModelSet:
    """One binary classifier per task label, sharing a single embedder.

    Labels whose inspected sample had only one class get no classifier and
    report confidence 0 everywhere.
    """

    classifiers: dict[str, LinearBinaryClassifier | None]
    trained_on: list[str] = field(default_factory=list)
    embedder_id: str = ""

    def confidences(self, label: str, vectors: np.ndarray) -> np.ndarray:
        clf = self.classifiers[label]
        if clf is None:
            return np.zeros(len(vectors))
        return clf.confidence(vectors)


def train_proxies(
    dataset: Dataset,
    inspected_ids: set[str],
    oracle_labels: Mapping[str, str],
    embedder: Embedder,
    config: SgdConfig | None = None,
) -> ProxyModelSet:
    """Train per-label proxies on the inspected subset only.

    For each label, inspected instances carrying it become positives and all
    other inspected instances negatives.
    """
    if not inspected_ids:
        raise ValueError("cannot train proxies on an empty inspection set")
    known_ids = {inst.id for inst in dataset.instances}
    missing = inspected_ids - known_ids
    if missing:
        raise ValueError(f"inspected ids not in dataset: {sorted(missing)[:5]}")
    uncovered = inspected_ids - set(oracle_labels)
    if uncovered:
        raise ValueError(f"inspected ids without oracle labels: {sorted(uncovered)[:5]}")

    labels = _task_labels(dataset)
    inspected = [inst for inst in dataset.instances if inst.id in inspected_ids]
    vectors = embedder.embed([inst.text for inst in inspected])
    config = config or SgdConfig()
    classifiers: dict[str, LinearBinaryClassifier | None] = {}
    for k, label in enumerate(labels):
        y = np.array([1 if oracle_labels[inst.id] == label else -1 for inst in inspected])
        if not (np.any(y > 0) and np.any(y < 0)):
            logger.warning("label %r has a single-class inspection sample; using a zero-confidence stub", label)
            classifiers[label] = None
            continue
        classifiers[label] = sgd_train(
            list(zip(vectors, y)),
            SgdConfig(l2=config.l2, max_iterations=config.max_iterations, seed=config.seed + k, tol=config.tol),
        )
    return ProxyModelSet(
        classifiers=classifiers,
        trained_on=sorted(inspected_ids),
        embedder_id=getattr(embedder, "embedder_id", ""),
    )


def final_score(specified: int, proxy_confidence: float, weight: float) -> float:
    """Blend the generation-time label indicator with the proxy confidence."""
    if specified not in (0, 1):
        raise ValueError(f"specified indicator must be 0 or 1, got {specified}")
    if not 0.0 <= proxy_confidence <= 1.0:
        raise ValueError(f"proxy confidence must be in [0, 1], got {proxy_confidence}")
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must be in [0, 1], got {weight}")
    return specified * weight + proxy_confidence * (1.0 - weight)


def _task_labels(dataset: Dataset) -> list[str]:
    labels = dataset.run_metadata.get("labels")
    if labels:
        return list(labels)
    return dataset.labels_in_use()


def replace_labels(
    dataset: Dataset,
    mode: str,
    oracle: Labeler,
    embedder: Embedder | None = None,
    n_inspected: int | None = None,
    weight: float = DEFAULT_SPECIFIED_WEIGHT,
    rng_seed: int = 0,
    sgd_config: SgdConfig | None = None,
) -> Dataset:
    """Return a copy of the dataset with labels replaced.

    mode "oracle_all": every instance gets the oracle's prediction.
    mode "proxy": n_inspected instances are sampled without replacement and
    oracle-labeled; proxies trained on them score every other instance, and
    each uninspected instance takes the label with the highest blended score
    (ties keep the specified label when it participates, else the lowest
    label index wins).
    """
    out = dataset.copy()
    if mode == "oracle_all":
        for inst in out.instances:
            inst.current_label = oracle.predict(inst.text)
            inst.label_provenance = "oracle"
        return out
    if mode != "proxy":
        raise ValueError(f"unknown label-replacement mode {mode!r}")
    if n_inspected is None:
        raise ValueError("proxy mode needs n_inspected")
    if embedder is None:
        raise ValueError("proxy mode needs an embedder")
    if n_inspected > len(out.instances):
        raise ValueError(
            f"cannot inspect {n_inspected} of {len(out.instances)} instances"
        )

    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(out.instances))
    inspected_idx = set(int(i) for i in order[:n_inspected])
    oracle_labels: dict[str, str] = {}
    for i in inspected_idx:
        inst = out.instances[i]
        inst.current_label = oracle.predict(inst.text)
        inst.label_provenance = "oracle"
        oracle_labels[inst.id] = inst.current_label

    proxies = train_proxies(
        out, {out.instances[i].id for i in inspected_idx}, oracle_labels, embedder, sgd_config
    )
    labels = _task_labels(dataset)
    uninspected = [inst for i, inst in enumerate(out.instances) if i not in inspected_idx]
    if not uninspected:
        return out
    vectors = embedder.embed([inst.text for inst in uninspected])
    scores = np.stack(
        [proxies.confidences(label, vectors) * (1.0 - weight) for label in labels], axis=1
    )
    for j, inst in enumerate(uninspected):
        spec_idx = labels.index(inst.specified_label)
        blended = scores[j].copy()
        blended[spec_idx] += weight
        best = float(blended.max())
        if blended[spec_idx] >= best - 1e-12:
            chosen = inst.specified_label  # prefer the generation-time label on ties
        else:
            chosen = labels[int(np.argmax(blended))]
        inst.current_label = chosen
        inst.label_provenance = "proxy"
    return out


@dataclass
class OOSModel:
    """In-scope vs out-of-scope classifier over embeddings."""

    classifier: LinearBinaryClassifier
    threshold: float = 0.5
    embedder_id: str = ""

    def predict_oos(self, vectors: np.ndarray) -> np.ndarray:
        return self.classifier.confidence(vectors) > self.threshold


def train_oos_model(
    annotations: Sequence[tuple[str, bool]],
    embedder: Embedder,
    threshold: float = 0.5,
    config: SgdConfig | None = None,
) -> OOSModel:
    """Train the out-of-scope filter from (text, is_out_of_scope) annotations."""
    flags = {flag for _, flag in annotations}
    if flags != {True, False}:
        raise ValueError("annotations must contain both in-scope and out-of-scope texts")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    vectors = embedder.embed([text for text, _ in annotations])
    y = [1 if flag else -1 for _, flag in annotations]
    clf = sgd_train(list(zip(vectors, y)), config)
    return OOSModel(classifier=clf, threshold=threshold, embedder_id=getattr(embedder, "embedder_id", ""))


def evaluate_oos_model(
    annotations: Sequence[tuple[str, bool]],
    embedder: Embedder,
    n_splits: int = 10,
    train_ratio: float = 0.8,
    rng_seed: int = 0,
    config: SgdConfig | None = None,
) -> dict:
    """Repeated random split evaluation of the out-of-scope classifier.

    Splits the annotations train/test at the given ratio n_splits times and
    reports mean and standard deviation of held-out accuracy.
    """
    rng = np.random.default_rng(rng_seed)
    annotations = list(annotations)
    accuracies = []
    for split in range(n_splits):
        order = rng.permutation(len(annotations))
        cut = int(round(train_ratio * len(annotations)))
        train = [annotations[i] for i in order[:cut]]
        test = [annotations[i] for i in order[cut:]]
        if {f for _, f in train} != {True, False} or not test:
            continue  # degenerate split: skip rather than fail the protocol
        model = train_oos_model(train, embedder, config=config)
        vectors = embedder.embed([t for t, _ in test])
        predicted = model.predict_oos(vectors)
        actual = np.array([flag for _, flag in test])
        accuracies.append(float(np.mean(predicted == actual)))
    return {
        "n_splits": len(accuracies),
        "accuracy_mean": float(np.mean(accuracies)) if accuracies else None,
        "accuracy_std": float(np.std(accuracies)) if accuracies else None,
    }


def filter_oos(dataset: Dataset, model: OOSModel, embedder: Embedder) -> tuple[Dataset, dict]:
    """Drop instances the model flags as out-of-scope.

    Returns the filtered dataset (survivors marked in-scope, untouched
    otherwise) and a report with the removal count and ratio.
    """
    source = dataset.copy()
    if not source.instances:
        return source, {"removed": 0, "ratio": 0.0, "removed_ids": []}
    vectors = embedder.embed([inst.text for inst in source.instances])
    flags = model.predict_oos(vectors)
    kept: list[DataInstance] = []
    removed_ids: list[str] = []
    for inst, is_oos in zip(source.instances, flags):
        if is_oos:
            inst.oos_state = OOS_OUT_OF_SCOPE
            removed_ids.append(inst.id)
        else:
            inst.oos_state = OOS_IN_SCOPE
            kept.append(inst)
    filtered = Dataset(source.task_name, kept, source.run_metadata)
    report = {
        "removed": len(removed_ids),
        "ratio": len(removed_ids) / len(source.instances),
        "removed_ids": removed_ids,
    }
    return filtered, report


def balanced_subsample(datasets: Sequence[Dataset], rng_seed: int = 0) -> list[Dataset]:
    """Subsample every dataset to the size of the smallest one.

    Keeps compared conditions the same size after filtering removed
    different amounts from each.
    """
    rng = np.random.default_rng(rng_seed)
    smallest = min(len(d.instances) for d in datasets)
    out = []
    for dataset in datasets:
        copy = dataset.copy()
        idx = sorted(rng.choice(len(copy.instances), size=smallest, replace=False))
        copy.instances = [copy.instances[int(i)] for i in idx]
        out.append(copy)
    return out
