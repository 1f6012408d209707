"""Tests for the label-replacement and out-of-scope filtering machinery."""

import numpy as np
import pytest

from divgen.curation import (
    OOSModel,
    ProxyModelSet,
    SgdConfig,
    balanced_subsample,
    evaluate_oos_model,
    filter_oos,
    final_score,
    hinge_objective,
    replace_labels,
    sgd_train,
    train_oos_model,
    train_proxies,
)
from divgen.pipeline import DataInstance, Dataset


class LookupEmbedder:
    """Test embedder: vectors come straight from a table keyed by text."""

    embedder_id = "lookup"

    def __init__(self, table):
        self.table = table

    def embed(self, texts):
        return np.stack([self.table[t] for t in texts])


class LookupLabeler:
    def __init__(self, table):
        self.table = table

    def predict(self, text):
        return self.table[text]


def clustered_dataset(n_per_label, labels, rng, flip_fraction=0.0, spread=0.25):
    """Linearly separable clusters, one per label, with optional label noise.

    Returns (dataset, embedder, truth) where truth maps text -> true label.
    """
    dim = 16
    centers = {label: rng.normal(0, 1, dim) * 3 for label in labels}
    table, truth, instances = {}, {}, []
    flips = 0
    n_total = n_per_label * len(labels)
    flip_idx = set(rng.choice(n_total, size=int(round(flip_fraction * n_total)), replace=False))
    i = 0
    for label in labels:
        for _ in range(n_per_label):
            text = f"pt-{i:05d}"
            table[text] = centers[label] + rng.normal(0, spread, dim)
            truth[text] = label
            specified = label
            if i in flip_idx:
                specified = labels[(labels.index(label) + 1) % len(labels)]
                flips += 1
            instances.append(
                DataInstance(id=text, text=text, specified_label=specified, current_label=specified)
            )
            i += 1
    dataset = Dataset(task_name="synthetic", instances=instances,
                      run_metadata={"labels": list(labels)})
    return dataset, LookupEmbedder(table), truth


class TestSgdTrain:
    def test_two_point_separable(self):
        examples = [(np.array([1.0]), 1), (np.array([-1.0]), -1)]
        clf = sgd_train(examples, SgdConfig(seed=0))
        assert clf.predict(np.array([[1.0]]))[0] == 1
        assert clf.predict(np.array([[-1.0]]))[0] == -1

    def test_separable_clusters_fit_exactly(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(2, 0.4, (100, 8)), rng.normal(-2, 0.4, (100, 8))])
        y = np.array([1] * 100 + [-1] * 100)
        clf = sgd_train(list(zip(X, y)), SgdConfig(seed=1))
        assert np.mean(clf.predict(X) == y) == 1.0

    def test_objective_close_to_grid_search_optimum(self):
        X = np.array([[1.0, 0.5], [0.8, 1.2], [1.5, -0.2],
                      [-1.0, -0.5], [-0.7, -1.1], [-1.4, 0.3]])
        y = np.array([1, 1, 1, -1, -1, -1])
        lam = 0.1
        clf = sgd_train(list(zip(X, y)), SgdConfig(l2=lam, seed=3))
        sgd_obj = hinge_objective(X, y, clf.weights, clf.bias, lam)

        grid = np.arange(-3, 3.0001, 0.05)
        best = np.inf
        W1, W2 = np.meshgrid(grid, grid, indexing="ij")
        W = np.stack([W1.ravel(), W2.ravel()], axis=1)
        reg = lam / 2 * (W**2).sum(axis=1)
        for b in grid:
            margins = y[None, :] * (W @ X.T + b)
            obj = reg + np.maximum(0.0, 1.0 - margins).mean(axis=1)
            best = min(best, float(obj.min()))
        assert sgd_obj <= best * 1.05

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            sgd_train([(np.array([1.0]), 1), (np.array([2.0]), 1)])

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        X = rng.normal(0, 1, (40, 4))
        y = np.where(X[:, 0] > 0, 1, -1)
        a = sgd_train(list(zip(X, y)), SgdConfig(seed=7))
        b = sgd_train(list(zip(X, y)), SgdConfig(seed=7))
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_confidence_in_unit_interval(self):
        rng = np.random.default_rng(5)
        X = rng.normal(0, 2, (30, 3))
        y = np.where(X[:, 0] + X[:, 1] > 0, 1, -1)
        clf = sgd_train(list(zip(X, y)), SgdConfig(seed=0))
        conf = clf.confidence(rng.normal(0, 5, (100, 3)))
        assert np.all((conf > 0) & (conf < 1))


class TestFinalScore:
    def test_blend_arithmetic(self):
        assert final_score(1, 0.9, 0.3) == pytest.approx(0.93)

    def test_zero_inputs(self):
        assert final_score(0, 0.0, 0.7) == 0.0

    def test_degenerate_weight_returns_indicator(self):
        assert final_score(1, 0.2, 1.0) == 1.0
        assert final_score(0, 0.2, 1.0) == 0.0

    def test_matches_direct_arithmetic_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            s = int(rng.integers(0, 2))
            p = float(rng.uniform())
            w = float(rng.uniform())
            assert final_score(s, p, w) == s * w + p * (1 - w)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            final_score(2, 0.5, 0.5)
        with pytest.raises(ValueError):
            final_score(1, 1.5, 0.5)
        with pytest.raises(ValueError):
            final_score(1, 0.5, -0.1)


class TestTrainProxies:
    def test_one_classifier_per_label(self):
        rng = np.random.default_rng(1)
        dataset, embedder, truth = clustered_dataset(30, ["a", "b", "c"], rng)
        inspected = {inst.id for inst in dataset.instances[:90]}
        oracle_labels = {i: truth[i] for i in inspected}
        proxies = train_proxies(dataset, inspected, oracle_labels, embedder)
        assert set(proxies.classifiers) == {"a", "b", "c"}
        assert all(clf is not None for clf in proxies.classifiers.values())
        assert len(proxies.trained_on) == 90

    def test_single_label_sample_yields_stubs(self):
        rng = np.random.default_rng(2)
        dataset, embedder, truth = clustered_dataset(10, ["a", "b"], rng)
        inspected = {i.id for i in dataset.instances if truth[i.text] == "a"}
        oracle_labels = {i: "a" for i in inspected}
        proxies = train_proxies(dataset, inspected, oracle_labels, embedder)
        assert proxies.classifiers["b"] is None
        assert proxies.confidences("b", embedder.embed(["pt-00000"]))[0] == 0.0
        # with every inspected instance positive, "a" cannot train either
        assert proxies.classifiers["a"] is None

    def test_empty_inspection_rejected(self):
        rng = np.random.default_rng(3)
        dataset, embedder, _ = clustered_dataset(5, ["a", "b"], rng)
        with pytest.raises(ValueError):
            train_proxies(dataset, set(), {}, embedder)

    def test_unknown_ids_rejected(self):
        rng = np.random.default_rng(3)
        dataset, embedder, _ = clustered_dataset(5, ["a", "b"], rng)
        with pytest.raises(ValueError):
            train_proxies(dataset, {"nope"}, {"nope": "a"}, embedder)


class TestReplaceLabelsOracle:
    def test_oracle_all_matches_oracle_everywhere(self):
        rng = np.random.default_rng(4)
        dataset, embedder, truth = clustered_dataset(20, ["a", "b"], rng, flip_fraction=0.3)
        oracle = LookupLabeler(truth)
        replaced = replace_labels(dataset, "oracle_all", oracle)
        assert all(inst.current_label == truth[inst.text] for inst in replaced.instances)
        assert all(inst.label_provenance == "oracle" for inst in replaced.instances)

    def test_originals_untouched(self):
        rng = np.random.default_rng(5)
        dataset, embedder, truth = clustered_dataset(10, ["a", "b"], rng, flip_fraction=0.5)
        before = [inst.to_dict() for inst in dataset.instances]
        replaced = replace_labels(dataset, "oracle_all", LookupLabeler(truth))
        assert [inst.to_dict() for inst in dataset.instances] == before
        assert [i.id for i in replaced.instances] == [i.id for i in dataset.instances]
        assert [i.text for i in replaced.instances] == [i.text for i in dataset.instances]
        assert len(replaced.instances) == len(dataset.instances)


class TestReplaceLabelsProxy:
    def test_flip_recovery(self):
        rng = np.random.default_rng(6)
        dataset, embedder, truth = clustered_dataset(100, ["a", "b", "c"], rng, flip_fraction=0.1)
        replaced = replace_labels(
            dataset, "proxy", LookupLabeler(truth), embedder=embedder,
            n_inspected=90, rng_seed=0,
        )
        accuracy = np.mean([inst.current_label == truth[inst.text] for inst in replaced.instances])
        assert accuracy >= 0.95

    def test_weight_one_keeps_specified_labels(self):
        rng = np.random.default_rng(7)
        dataset, embedder, truth = clustered_dataset(20, ["a", "b"], rng, flip_fraction=0.4)
        replaced = replace_labels(
            dataset, "proxy", LookupLabeler(truth), embedder=embedder,
            n_inspected=10, weight=1.0, rng_seed=1,
        )
        for inst in replaced.instances:
            if inst.label_provenance == "proxy":
                assert inst.current_label == inst.specified_label

    def test_weight_zero_follows_proxy_argmax(self):
        rng = np.random.default_rng(8)
        dataset, embedder, truth = clustered_dataset(50, ["a", "b"], rng, flip_fraction=0.5)
        replaced = replace_labels(
            dataset, "proxy", LookupLabeler(truth), embedder=embedder,
            n_inspected=40, weight=0.0, rng_seed=2,
        )
        proxied = [inst for inst in replaced.instances if inst.label_provenance == "proxy"]
        # proxies on well-separated clusters follow the truth, not the flips
        accuracy = np.mean([inst.current_label == truth[inst.text] for inst in proxied])
        assert accuracy >= 0.95

    def test_inspection_count_and_provenance(self):
        rng = np.random.default_rng(9)
        dataset, embedder, truth = clustered_dataset(30, ["a", "b"], rng)
        replaced = replace_labels(
            dataset, "proxy", LookupLabeler(truth), embedder=embedder,
            n_inspected=15, rng_seed=3,
        )
        by_prov = replaced.counts_by("label_provenance")
        assert by_prov == {"oracle": 15, "proxy": 45}

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        dataset, embedder, truth = clustered_dataset(25, ["a", "b"], rng, flip_fraction=0.2)
        a = replace_labels(dataset, "proxy", LookupLabeler(truth), embedder=embedder,
                           n_inspected=20, rng_seed=5)
        b = replace_labels(dataset, "proxy", LookupLabeler(truth), embedder=embedder,
                           n_inspected=20, rng_seed=5)
        assert [i.to_dict() for i in a.instances] == [i.to_dict() for i in b.instances]

    def test_oversized_inspection_rejected(self):
        rng = np.random.default_rng(11)
        dataset, embedder, truth = clustered_dataset(5, ["a", "b"], rng)
        with pytest.raises(ValueError):
            replace_labels(dataset, "proxy", LookupLabeler(truth), embedder=embedder,
                           n_inspected=11)


class TestOOS:
    def oos_setup(self, rng, n=100):
        dim = 8
        in_center, out_center = rng.normal(0, 1, dim) * 3, rng.normal(0, 1, dim) * 3
        table, annotations = {}, []
        for i in range(n):
            is_out = i % 4 == 0  # quarter of the data is out of scope
            text = f"t-{i:04d}"
            table[text] = (out_center if is_out else in_center) + rng.normal(0, 0.3, dim)
            annotations.append((text, is_out))
        return table, annotations

    def test_separable_annotations_evaluate_perfectly(self):
        rng = np.random.default_rng(12)
        table, annotations = self.oos_setup(rng)
        result = evaluate_oos_model(annotations, LookupEmbedder(table), rng_seed=0)
        assert result["n_splits"] == 10
        assert result["accuracy_mean"] == 1.0

    def test_single_class_rejected(self):
        rng = np.random.default_rng(13)
        table, annotations = self.oos_setup(rng)
        in_only = [(t, f) for t, f in annotations if not f]
        with pytest.raises(ValueError):
            train_oos_model(in_only, LookupEmbedder(table))

    def test_filter_removes_planted_oos(self):
        rng = np.random.default_rng(14)
        table, annotations = self.oos_setup(rng, n=200)
        embedder = LookupEmbedder(table)
        model = train_oos_model(annotations, embedder)
        instances = [
            DataInstance(id=t, text=t, specified_label="x", current_label="x")
            for t, _ in annotations
        ]
        dataset = Dataset(task_name="t", instances=instances, run_metadata={"labels": ["x", "y"]})
        filtered, report = filter_oos(dataset, model, embedder)
        planted = {t for t, f in annotations if f}
        assert set(report["removed_ids"]) == planted
        assert report["removed"] == len(planted)
        assert report["ratio"] == pytest.approx(len(planted) / 200)
        assert all(inst.oos_state == "in_scope" for inst in filtered.instances)

    def test_model_flagging_nothing_changes_nothing(self):
        rng = np.random.default_rng(15)
        table, annotations = self.oos_setup(rng)
        embedder = LookupEmbedder(table)
        model = train_oos_model(annotations, embedder)
        always_in = OOSModel(classifier=model.classifier, threshold=0.999999, embedder_id="lookup")
        # drive the confidence below any reachable value by flipping weights
        always_in.classifier.weights = -np.abs(model.classifier.weights) * 0
        always_in.classifier.bias = -50.0
        instances = [DataInstance(id=t, text=t, specified_label="x", current_label="x")
                     for t, _ in annotations]
        dataset = Dataset(task_name="t", instances=instances, run_metadata={"labels": ["x", "y"]})
        filtered, report = filter_oos(dataset, always_in, embedder)
        assert report["removed"] == 0
        assert [i.id for i in filtered.instances] == [i.id for i in dataset.instances]

    def test_threshold_validation(self):
        rng = np.random.default_rng(16)
        table, annotations = self.oos_setup(rng)
        with pytest.raises(ValueError):
            train_oos_model(annotations, LookupEmbedder(table), threshold=1.5)


class TestBalancedSubsample:
    def test_equalizes_sizes(self):
        def make(n, prefix):
            return Dataset(
                task_name="t",
                instances=[DataInstance(id=f"{prefix}{i}", text=f"{prefix}{i}",
                                        specified_label="x", current_label="x")
                           for i in range(n)],
                run_metadata={},
            )

        small, large = make(10, "s"), make(25, "l")
        balanced = balanced_subsample([small, large], rng_seed=0)
        assert [len(d.instances) for d in balanced] == [10, 10]
        assert len(large.instances) == 25  # originals untouched
