"""Loading, splitting, subsampling, streaming, synthetic generation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptsearch import (
    ClassificationDataset,
    ConfigError,
    DataError,
    ExampleStream,
    FactInstance,
    FactDataset,
    SyntheticSpec,
    Vocabulary,
    gen_synthetic_sentiment,
    load_classification,
    load_facts,
    split,
    subsample,
)
from promptsearch.data import PAIR_TSV


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadClassification:
    def test_two_row_tsv(self, tmp_path):
        path = write(tmp_path / "d.tsv", "great movie\tpos\nawful\tneg\n")
        ds = load_classification(path)
        assert len(ds) == 2
        assert ds.classes == ("neg", "pos")
        assert ds.examples[0] == ({"sent": "great movie"}, "pos")

    def test_pair_tsv_fields(self, tmp_path):
        path = write(tmp_path / "d.tsv", "a man walks\ta person moves\tentailment\n")
        ds = load_classification(path, fmt=PAIR_TSV)
        inputs, label = ds.examples[0]
        assert inputs == {"prem": "a man walks", "hyp": "a person moves"}
        assert label == "entailment"

    def test_empty_file_rejected(self, tmp_path):
        path = write(tmp_path / "d.tsv", "")
        with pytest.raises(DataError):
            load_classification(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = write(tmp_path / "d.tsv", "ok\tpos\nbroken row\n")
        with pytest.raises(DataError, match=":2:"):
            load_classification(path)

    def test_header_skipped_when_flagged(self, tmp_path):
        path = write(tmp_path / "d.tsv", "sentence\tlabel\nfine\tpos\n")
        ds = load_classification(path, header=True)
        assert len(ds) == 1

    def test_label_whitelist_enforced(self, tmp_path):
        path = write(tmp_path / "d.tsv", "fine\tpos\nodd\tmaybe\n")
        with pytest.raises(DataError, match="maybe"):
            load_classification(path, label_whitelist={"pos", "neg"})

    def test_whitelist_defines_class_list(self, tmp_path):
        path = write(tmp_path / "d.tsv", "fine\tpos\n")
        ds = load_classification(path, label_whitelist={"pos", "neg"})
        assert ds.classes == ("neg", "pos")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_classification(tmp_path / "absent.tsv")


def fact_line(sub, rel, obj, token, contexts=()):
    return json.dumps(
        {"sub": sub, "rel": rel, "obj": obj, "obj_token": token, "contexts": list(contexts)}
    )


class TestLoadFacts:
    def test_grouping(self, tmp_path):
        path = write(
            tmp_path / "f.jsonl",
            "\n".join(
                [
                    fact_line("s1", "r1", "o1", 1),
                    fact_line("s2", "r1", "o2", 2),
                    fact_line("s3", "r2", "o3", 3),
                ]
            ),
        )
        ds = load_facts(path)
        assert ds.relations == ("r1", "r2")
        assert {r: len(v) for r, v in ds.facts_by_relation.items()} == {"r1": 2, "r2": 1}

    def test_exclusion_names_triple(self, tmp_path):
        path = write(tmp_path / "f.jsonl", fact_line("s1", "r1", "o1", 1))
        with pytest.raises(DataError, match="'s1', 'r1', 'o1'"):
            load_facts(path, exclusion={("s1", "r1", "o1")})

    def test_vocab_resolves_and_validates_tokens(self, tmp_path):
        vocab = Vocabulary(("[MASK]", "paris", "rome"), 0, frozenset({0}))
        path = write(
            tmp_path / "f.jsonl", json.dumps({"sub": "s", "rel": "r", "obj": "paris"})
        )
        ds = load_facts(path, vocab=vocab)
        assert ds.all_facts[0].object_token == 1

    def test_multiword_object_rejected_with_vocab(self, tmp_path):
        vocab = Vocabulary(("[MASK]", "paris"), 0, frozenset({0}))
        path = write(
            tmp_path / "f.jsonl", json.dumps({"sub": "s", "rel": "r", "obj": "new york"})
        )
        with pytest.raises(DataError, match="single"):
            load_facts(path, vocab=vocab)

    def test_no_token_source_rejected(self, tmp_path):
        path = write(tmp_path / "f.jsonl", json.dumps({"sub": "s", "rel": "r", "obj": "x"}))
        with pytest.raises(DataError):
            load_facts(path)

    def test_malformed_line_numbered(self, tmp_path):
        path = write(tmp_path / "f.jsonl", fact_line("s", "r", "o", 1) + "\nnot json\n")
        with pytest.raises(DataError, match=":2:"):
            load_facts(path)

    def test_cap_per_relation_deterministic(self, tmp_path):
        lines = [fact_line(f"s{i}", "r1", f"o{i}", i) for i in range(1500)]
        path = write(tmp_path / "f.jsonl", "\n".join(lines))
        a = load_facts(path, max_per_relation=1000, seed=5)
        b = load_facts(path, max_per_relation=1000, seed=5)
        assert len(a) == 1000
        assert [f.subject for f in a.all_facts] == [f.subject for f in b.all_facts]
        c = load_facts(path, max_per_relation=1000, seed=6)
        assert [f.subject for f in a.all_facts] != [f.subject for f in c.all_facts]


def toy_dataset(n, classes=("neg", "pos")):
    examples = tuple(
        ({"sent": f"sentence {i}"}, classes[i % len(classes)]) for i in range(n)
    )
    return ClassificationDataset(examples, classes)


class TestSplit:
    def test_80_20_sizes(self):
        train, dev = split(toy_dataset(10), "80-20", seed=0)
        assert (len(train), len(dev)) == (8, 2)
        train_sents = {inputs["sent"] for inputs, _ in train.examples}
        dev_sents = {inputs["sent"] for inputs, _ in dev.examples}
        assert train_sents.isdisjoint(dev_sents)

    def test_60_20_20_sizes(self):
        parts = split(toy_dataset(10), "60-20-20", seed=0)
        assert tuple(len(p) for p in parts) == (6, 2, 2)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            split(toy_dataset(10), "50-50", seed=0)

    def test_too_small(self):
        with pytest.raises(DataError):
            split(toy_dataset(2), "60-20-20", seed=0)

    @settings(max_examples=50)
    @given(
        n=st.integers(min_value=3, max_value=60),
        seed=st.integers(min_value=0, max_value=1000),
        scheme=st.sampled_from(["80-20", "60-20-20"]),
    )
    def test_disjoint_and_exhaustive(self, n, seed, scheme):
        ds = toy_dataset(n)
        parts = split(ds, scheme, seed)
        seen = [ex for p in parts for ex in p.examples]
        assert sorted(e[0]["sent"] for e in seen) == sorted(
            e[0]["sent"] for e in ds.examples
        )
        flat = [e[0]["sent"] for e in seen]
        assert len(flat) == len(set(flat))

    def test_deterministic(self):
        a = split(toy_dataset(20), "80-20", seed=4)
        b = split(toy_dataset(20), "80-20", seed=4)
        assert a[0].examples == b[0].examples

    def test_fact_split_by_relation_counts(self):
        facts = {
            "r1": tuple(
                FactInstance(f"s{i}", "r1", f"o{i}", i) for i in range(5)
            )
        }
        parts = split(FactDataset(facts), "60-20-20", seed=0)
        assert tuple(len(p) for p in parts) == (3, 1, 1)

    def test_fact_split_keeps_pairs_together(self):
        # Two facts share (s0, o0); they must land in the same part.
        facts = {
            "r1": tuple(
                [FactInstance("s0", "r1", "o0", 0, context_sentences=("a",))]
                + [FactInstance("s0", "r1", "o0", 0, context_sentences=("b",))]
                + [FactInstance(f"s{i}", "r1", f"o{i}", i) for i in range(1, 8)]
            )
        }
        for seed in range(10):
            parts = split(FactDataset(facts), "60-20-20", seed=seed)
            homes = [
                i
                for i, part in enumerate(parts)
                for fact in part.facts_by_relation.get("r1", ())
                if (fact.subject, fact.object_canonical) == ("s0", "o0")
            ]
            assert len(homes) == 2 and homes[0] == homes[1]

    def test_fact_split_too_few_pairs(self):
        facts = {"r1": (FactInstance("s", "r1", "o", 0),)}
        with pytest.raises(DataError):
            split(FactDataset(facts), "80-20", seed=0)

    def test_unsupported_type(self):
        with pytest.raises(ConfigError):
            split(["not", "a", "dataset"], "80-20", seed=0)


class TestSubsample:
    def test_shape(self):
        out = subsample(toy_dataset(50), sizes=(5, 10), repeats=3, seed=0)
        assert set(out) == {5, 10}
        assert all(len(draws) == 3 for draws in out.values())
        assert all(len(d) == 5 for d in out[5])

    def test_saturation(self):
        ds = toy_dataset(6)
        out = subsample(ds, sizes=(6,), repeats=2, seed=0)
        for draw in out[6]:
            assert draw.examples == ds.examples

    def test_deterministic_and_seed_sensitive(self):
        ds = toy_dataset(100)
        a = subsample(ds, sizes=(10,), repeats=5, seed=1)
        b = subsample(ds, sizes=(10,), repeats=5, seed=1)
        c = subsample(ds, sizes=(10,), repeats=5, seed=2)
        assert [d.examples for d in a[10]] == [d.examples for d in b[10]]
        assert [d.examples for d in a[10]] != [d.examples for d in c[10]]

    def test_size_exceeds_train(self):
        with pytest.raises(DataError):
            subsample(toy_dataset(5), sizes=(6,), repeats=1, seed=0)

    def test_stratified_ratio(self):
        # 60 pos / 40 neg; size 10 stratified -> 6 pos, 4 neg.
        examples = tuple(
            ({"sent": f"s{i}"}, "pos" if i < 60 else "neg") for i in range(100)
        )
        ds = ClassificationDataset(examples, ("neg", "pos"))
        out = subsample(ds, sizes=(10,), repeats=4, seed=0, stratified=True)
        for draw in out[10]:
            labels = [label for _, label in draw.examples]
            assert labels.count("pos") == 6
            assert labels.count("neg") == 4


class TestExampleStream:
    def test_first_epoch_is_a_permutation(self):
        examples = [({"sent": f"s{i}"}, "pos") for i in range(10)]
        stream = ExampleStream(examples, seed=0)
        batch = stream.next_batch(10)
        assert sorted(e[0]["sent"] for e in batch) == sorted(
            e[0]["sent"] for e in examples
        )

    def test_deterministic(self):
        examples = [({"sent": f"s{i}"}, "pos") for i in range(10)]
        a = ExampleStream(examples, seed=7)
        b = ExampleStream(examples, seed=7)
        for _ in range(5):
            assert a.next_batch(3) == b.next_batch(3)

    def test_state_restore_mid_epoch(self):
        examples = [({"sent": f"s{i}"}, "pos") for i in range(10)]
        stream = ExampleStream(examples, seed=7)
        stream.next_batch(4)
        state = json.loads(json.dumps(stream.state_dict()))
        expected = [stream.next_batch(3) for _ in range(4)]

        other = ExampleStream(examples, seed=999)
        other.restore(state)
        got = [other.next_batch(3) for _ in range(4)]
        assert got == expected

    def test_batches_span_epochs(self):
        examples = [({"sent": f"s{i}"}, "pos") for i in range(4)]
        stream = ExampleStream(examples, seed=0)
        batch = stream.next_batch(6)  # 4 from epoch one, 2 from epoch two
        assert len(batch) == 6

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            ExampleStream([], seed=0)

    def test_bad_batch_size(self):
        stream = ExampleStream([({"sent": "s"}, "pos")], seed=0)
        with pytest.raises(ConfigError):
            stream.next_batch(0)


class TestSyntheticSentiment:
    def test_every_sentence_has_exactly_one_polarity_token(self):
        task = gen_synthetic_sentiment(SyntheticSpec(), 100, seed=0)
        polarity = set(task.pools["pos"]) | set(task.pools["neg"])
        for inputs, label in task.dataset.examples:
            ids = task.vocab.encode(inputs["sent"])
            hits = [t for t in ids if t in polarity]
            assert len(hits) == 1
            expected = "pos" if hits[0] in task.pools["pos"] else "neg"
            assert label == expected
            assert len(ids) == SyntheticSpec().sentence_len

    def test_corpus_items_mask_the_polarity_word(self):
        spec = SyntheticSpec()
        task = gen_synthetic_sentiment(spec, 40, seed=1)
        polarity = set(task.pools["pos"]) | set(task.pools["neg"])
        for token_ids, mask_position, gold in task.corpus:
            assert token_ids[mask_position] == task.vocab.mask_id
            assert mask_position == spec.sentence_len
            assert gold in polarity
            assert gold in token_ids[:-1]

    def test_labels_alternate(self):
        task = gen_synthetic_sentiment(SyntheticSpec(), 6, seed=0)
        assert [label for _, label in task.dataset.examples] == [
            "pos", "neg", "pos", "neg", "pos", "neg",
        ]

    def test_zero_examples(self):
        task = gen_synthetic_sentiment(SyntheticSpec(), 0, seed=0)
        assert len(task.dataset) == 0
        assert task.corpus == ()

    def test_deterministic(self):
        a = gen_synthetic_sentiment(SyntheticSpec(), 30, seed=5)
        b = gen_synthetic_sentiment(SyntheticSpec(), 30, seed=5)
        assert a.dataset.examples == b.dataset.examples
        assert a.corpus == b.corpus

    def test_pool_validation(self):
        with pytest.raises(DataError):
            SyntheticSpec(n_pos=0)
        with pytest.raises(DataError):
            SyntheticSpec(sentence_len=1)

    def test_vocabulary_layout(self):
        task = gen_synthetic_sentiment(SyntheticSpec(n_pos=2, n_neg=2, n_neutral=3), 4, 0)
        assert task.vocab.mask_id == 0
        assert task.vocab.size == 1 + 2 + 2 + 3
        assert task.pools["pos"] == (1, 2)
        assert task.pools["neg"] == (3, 4)
