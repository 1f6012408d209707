"""Tests for prompt rendering, label cycling, and the generation loop."""

import json

import numpy as np
import pytest

from divgen.backends import MockCompletionBackend
from divgen.mocklm import fit_labeled_corpus
from divgen.pipeline import (
    Dataset,
    DataInstance,
    ExamplePool,
    GenerationInterrupted,
    TaskSpec,
    estimate_budget,
    load_dataset,
    load_task,
    next_label,
    parse_completion,
    render_prompt,
    run_generation,
    sample_seed_examples,
    save_task,
    select_examples,
    write_dataset,
)
from divgen.sampling import FrequencyLedger, compute_suppression_bias


def three_label_task(**overrides) -> TaskSpec:
    fields = dict(
        name="toy",
        text_type="mood message",
        labels=["joy", "anger", "fear"],
        label_phrases={
            "joy": "expressing joy",
            "anger": "expressing anger",
            "fear": "expressing fear",
        },
        target_count=120,
        batch_size=20,
        temperature=0.9,
        max_tokens=16,
    )
    fields.update(overrides)
    return TaskSpec(**fields)


def three_label_backend(smoothing=0.0):
    corpus = {
        "joy": [
            "feeling delighted about the sunny game today",
            "absolutely thrilled about the big party tonight",
            "delighted after the long trip home",
        ],
        "anger": [
            "feeling furious about the broken deadline today",
            "absolutely outraged about the long meeting tonight",
            "furious after the rude phone call",
        ],
        "fear": [
            "feeling terrified about the dark storm today",
            "absolutely anxious about the final exam tonight",
            "terrified after the strange noise outside",
        ],
    }
    model = fit_labeled_corpus(corpus, order=3, smoothing=smoothing)
    phrases = {
        "expressing joy": "joy",
        "expressing anger": "anger",
        "expressing fear": "fear",
    }
    return MockCompletionBackend(model, phrases)


class TestRenderPrompt:
    def test_zero_shot_template_a(self):
        task = TaskSpec(
            name="sst",
            text_type="movie review",
            labels=["positive", "negative"],
            label_phrases={"positive": "positive sentiment", "negative": "negative sentiment"},
            target_count=20,
        )
        prompt = render_prompt(task, "positive")
        assert prompt == (
            "Write a movie review to cover all following elements\n"
            "Elements: positive sentiment\n"
            'Movie review: "'
        )

    def test_examples_rendered_with_separators(self):
        task = TaskSpec(
            name="cb",
            text_type="news headline",
            labels=["non-clickbait", "clickbait"],
            label_phrases={"non-clickbait": "valid news", "clickbait": "clickbait"},
            target_count=20,
        )
        prompt = render_prompt(
            task,
            "clickbait",
            examples=[
                ("Zach Johnson Wins Sony Open", "non-clickbait"),
                ("10 Of The Biggest Lies We Were Told In 2015", "clickbait"),
            ],
        )
        assert prompt == (
            "Write a news headline to cover all following elements\n"
            "Elements: valid news\n"
            'News headline: "Zach Johnson Wins Sony Open"'
            "\n\n- - - - -\n\n"
            "Write a news headline to cover all following elements\n"
            "Elements: clickbait\n"
            'News headline: "10 Of The Biggest Lies We Were Told In 2015"'
            "\n\n- - - - -\n\n"
            "Write a news headline to cover all following elements\n"
            "Elements: clickbait\n"
            'News headline: "'
        )

    def test_template_c(self):
        task = TaskSpec(
            name="fo",
            text_type="sentence",
            labels=["formal", "informal"],
            label_phrases={"formal": "formal", "informal": "informal"},
            prompt_template="C",
            target_count=20,
        )
        assert render_prompt(task, "formal") == (
            "Show me a sentence that has the following characteristics\n"
            "Characteristics: formal\n"
            'Sentence: "'
        )

    def test_unknown_label_rejected(self):
        task = three_label_task()
        with pytest.raises(ValueError):
            render_prompt(task, "nope")
        with pytest.raises(ValueError):
            render_prompt(task, "joy", examples=[("text", "nope")])


class TestNextLabel:
    def test_picks_minimum(self):
        assert next_label({"a": 20, "b": 0}, ["a", "b"]) == "b"

    def test_tie_breaks_by_order(self):
        assert next_label({"a": 0, "b": 0}, ["a", "b"]) == "a"
        assert next_label({}, ["b", "a"]) == "b"

    def test_cycle_balances(self):
        counts = {"a": 0, "b": 0, "c": 0}
        for _ in range(9):
            label = next_label(counts, ["a", "b", "c"])
            counts[label] += 1
        assert counts == {"a": 3, "b": 3, "c": 3}


class TestSelectExamples:
    def test_zero_shot_first_cycle(self):
        pool = ExamplePool()
        rng = np.random.default_rng(0)
        assert select_examples(pool, 0, seeded=False, labels=["a", "b"], rng=rng) == []

    def test_one_example_per_label_in_order(self):
        pool = ExamplePool()
        pool.add("a text", "a")
        pool.add("b text", "b")
        rng = np.random.default_rng(0)
        picked = select_examples(pool, 1, seeded=False, labels=["a", "b"], rng=rng)
        assert picked == [("a text", "a"), ("b text", "b")]

    def test_seeded_examples_from_first_cycle(self):
        pool = ExamplePool()
        pool.add("seed a", "a")
        pool.add("seed b", "b")
        rng = np.random.default_rng(0)
        picked = select_examples(pool, 0, seeded=True, labels=["a", "b"], rng=rng)
        assert len(picked) == 2

    def test_empty_label_pool_skipped(self):
        pool = ExamplePool()
        pool.add("a text", "a")
        rng = np.random.default_rng(0)
        picked = select_examples(pool, 2, seeded=False, labels=["a", "b"], rng=rng)
        assert picked == [("a text", "a")]


class TestParseCompletion:
    def test_closing_quote_removed(self):
        assert parse_completion('great movie" and junk') == "great movie"

    def test_short_text_dropped(self):
        assert parse_completion("ab") is None
        assert parse_completion('  a" tail') is None

    def test_plain_text_kept(self):
        assert parse_completion("  solid text  ") == "solid text"


class TestRunGeneration:
    def test_target_count_and_balance(self):
        dataset = run_generation(three_label_task(), three_label_backend(), rng_seed=5)
        generated = [i for i in dataset.instances if i.source == "generated"]
        assert len(generated) == 120
        counts = dataset.counts_by("specified_label")
        assert counts == {"joy": 40, "anger": 40, "fear": 40}

    def test_deterministic(self):
        a = run_generation(three_label_task(), three_label_backend(), rng_seed=9)
        b = run_generation(three_label_task(), three_label_backend(), rng_seed=9)
        assert [i.to_dict() for i in a.instances] == [i.to_dict() for i in b.instances]

    def test_balance_invariant_every_iteration(self):
        dataset = run_generation(three_label_task(), three_label_backend(0.02), rng_seed=1)
        counts = {label: 0 for label in ["joy", "anger", "fear"]}
        iterations = sorted({i.iteration for i in dataset.instances if i.source == "generated"})
        for it in iterations:
            for inst in dataset.instances:
                if inst.iteration == it:
                    counts[inst.specified_label] += 1
            assert max(counts.values()) - min(counts.values()) <= 20

    def test_file_bytes_reproducible(self, tmp_path):
        task = three_label_task(target_count=60)
        paths = []
        for run in ("a", "b"):
            out = tmp_path / f"{run}.ndjson"
            log = tmp_path / f"{run}.log.ndjson"
            run_generation(task, three_label_backend(), rng_seed=3,
                           out_path=str(out), request_log_path=str(log))
            paths.append((out.read_bytes(), log.read_bytes()))
        assert paths[0] == paths[1]

    def test_suppression_off_sends_empty_bias(self, tmp_path):
        log = tmp_path / "log.ndjson"
        run_generation(three_label_task(target_count=60), three_label_backend(),
                       rng_seed=2, request_log_path=str(log))
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert records, "no requests logged"
        assert all(rec["request"]["logit_bias"] == {} for rec in records)

    def test_suppression_bias_matches_ledger_of_prior_batches(self, tmp_path):
        log = tmp_path / "log.ndjson"
        task = three_label_task(target_count=60, logit_suppression=True)
        backend = three_label_backend(0.02)
        run_generation(task, backend, rng_seed=2, request_log_path=str(log))
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert records[0]["request"]["logit_bias"] == {}

        ledger = FrequencyLedger()
        for k, rec in enumerate(records):
            expected = compute_suppression_bias(ledger)
            for tok in backend.unbiasable_token_ids:
                expected.pop(tok, None)
            logged = {int(t): w for t, w in rec["request"]["logit_bias"].items()}
            assert logged == pytest.approx(expected)
            for text in rec["response"]["texts"]:
                ledger.update(backend.tokenize_for_ledger(text))

    def test_seed_examples_included_with_iteration_zero(self):
        task = three_label_task(
            target_count=60,
            seed_examples=[("a seeded joy text", "joy"), ("a seeded anger text", "anger"),
                           ("a seeded fear text", "fear")],
        )
        dataset = run_generation(task, three_label_backend(), rng_seed=0)
        seeds = [i for i in dataset.instances if i.source == "seed"]
        assert len(seeds) == 3
        assert all(i.iteration == 0 for i in seeds)
        generated = [i for i in dataset.instances if i.source == "generated"]
        assert len(generated) == 60

    def test_interrupt_and_resume_matches_uninterrupted(self, tmp_path):
        task = three_label_task(target_count=100)

        class Flaky:
            def __init__(self, inner, fail_at):
                self.inner = inner
                self.fail_at = fail_at
                self.calls = 0
                self.backend_id = inner.backend_id
                self.unbiasable_token_ids = inner.unbiasable_token_ids

            def complete(self, request):
                self.calls += 1
                if self.calls == self.fail_at:
                    raise RuntimeError("injected outage")
                return self.inner.complete(request)

            def tokenize_for_ledger(self, text):
                return self.inner.tokenize_for_ledger(text)

        straight = tmp_path / "straight.ndjson"
        run_generation(task, three_label_backend(), rng_seed=4, out_path=str(straight))

        resumed = tmp_path / "resumed.ndjson"
        flaky = Flaky(three_label_backend(), fail_at=3)
        with pytest.raises(GenerationInterrupted):
            run_generation(task, flaky, rng_seed=4, out_path=str(resumed))
        _, checkpoint = load_dataset(str(resumed))
        assert checkpoint is not None and checkpoint["batches_done"] == 2

        run_generation(task, three_label_backend(), rng_seed=4,
                       out_path=str(resumed), resume=True)
        assert resumed.read_bytes() == straight.read_bytes()


class TestBudget:
    def test_paper_scale_costs(self):
        task = TaskSpec(
            name="b", text_type="t", labels=["x", "y"],
            label_phrases={"x": "x", "y": "y"}, target_count=5600,
        )
        # 130 tokens per block, one block per example class plus the target
        assert round(estimate_budget(task, 0.02, n_example_classes=0), 2) == 14.56
        assert round(estimate_budget(task, 0.02), 2) == round(14.56 * 3, 2)

    def test_zero_instances_cost_nothing(self):
        task = TaskSpec(
            name="b", text_type="t", labels=["x", "y"],
            label_phrases={"x": "x", "y": "y"}, target_count=20, batch_size=20,
        )
        task.target_count = 0
        assert estimate_budget(task, 0.02) == 0.0


class TestSeedSampling:
    def test_default_eighteen_balanced(self):
        reference = [(f"text {i} {lab}", lab) for i in range(50) for lab in ("a", "b", "c")]
        rng = np.random.default_rng(0)
        seeds = sample_seed_examples(reference, ["a", "b", "c"], rng)
        assert len(seeds) == 18
        by_label = {}
        for _, lab in seeds:
            by_label[lab] = by_label.get(lab, 0) + 1
        assert by_label == {"a": 6, "b": 6, "c": 6}

    def test_five_labels_get_fifteen(self):
        labels = ["a", "b", "c", "d", "e"]
        reference = [(f"text {i} {lab}", lab) for i in range(20) for lab in labels]
        seeds = sample_seed_examples(reference, labels, np.random.default_rng(1))
        assert len(seeds) == 15


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        dataset = Dataset(
            task_name="t",
            instances=[
                DataInstance(id="a", text="hello world", specified_label="x", current_label="x"),
                DataInstance(id="b", text="unicode ✓ text", specified_label="y", current_label="y"),
            ],
            run_metadata={"task": "t", "seed": 1},
        )
        path = tmp_path / "d.ndjson"
        write_dataset(str(path), dataset)
        loaded, checkpoint = load_dataset(str(path))
        assert checkpoint is None
        assert [i.to_dict() for i in loaded.instances] == [i.to_dict() for i in dataset.instances]
        assert loaded.run_metadata == dataset.run_metadata

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            Dataset(
                task_name="t",
                instances=[
                    DataInstance(id="a", text="x", specified_label="x", current_label="x"),
                    DataInstance(id="a", text="y", specified_label="x", current_label="x"),
                ],
            )


class TestTaskIO:
    def test_round_trip(self, tmp_path):
        task = three_label_task(seed_examples=[("seeded joy", "joy")])
        path = tmp_path / "task.json"
        save_task(str(path), task)
        loaded = load_task(str(path))
        assert loaded == task

    def test_validation(self):
        with pytest.raises(ValueError):
            TaskSpec(name="t", text_type="x", labels=["only"],
                     label_phrases={"only": "only"}, target_count=20)
        with pytest.raises(ValueError):
            TaskSpec(name="t", text_type="x", labels=["a", "b"],
                     label_phrases={"a": "a"}, target_count=20)
