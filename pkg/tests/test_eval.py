"""Classification marginals, ranking metrics, credit rule, perturbation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from test_oracle import prompt_of, tiny_vocab
from promptsearch import (
    ClassProbs,
    ConfigError,
    DataError,
    FactInstance,
    LabelTokenSet,
    OracleRequest,
    OracleResponse,
    RankReport,
    Vocabulary,
    classification_metrics,
    classify,
    fact_rank_reports,
    inputs_for_fact,
    marginal_class_probs,
    oracle_top_token_predictor,
    parse_template,
    per_class_precision,
    perturb_facts,
    random_toy,
    rank_of_gold,
    ranking_metrics,
    re_accuracy,
    re_credit,
    write_classification_csv,
    write_rank_csv,
)


def response_from_probs(probs):
    probs = np.asarray(probs, dtype=np.float64)
    return OracleResponse(mask_log_probs=np.log(probs / probs.sum()))


class TestMarginals:
    def test_direct_sum(self):
        # ids: 0 good, 1 bad, 2 great, 3 terrible, 4 the
        response = response_from_probs([0.30, 0.20, 0.10, 0.05, 0.35])
        sets = LabelTokenSet(classes=("neg", "pos"), sets={"pos": (0, 2), "neg": (1, 3)})
        probs = marginal_class_probs(response, sets)
        assert abs(probs.probs["pos"] - 0.40) < 1e-12
        assert abs(probs.probs["neg"] - 0.25) < 1e-12

    def test_full_vocabulary_gives_one(self):
        response = response_from_probs([0.2, 0.3, 0.5])
        sets = LabelTokenSet(classes=("all",), sets={"all": (0, 1, 2)})
        assert abs(marginal_class_probs(response, sets).probs["all"] - 1.0) < 1e-12

    def test_singleton_sets_equal_raw_probabilities(self):
        response = response_from_probs([0.2, 0.3, 0.5])
        sets = LabelTokenSet(classes=("a", "b"), sets={"a": (0,), "b": (2,)})
        probs = marginal_class_probs(response, sets)
        assert abs(probs.probs["a"] - 0.2) < 1e-12
        assert abs(probs.probs["b"] - 0.5) < 1e-12

    @settings(max_examples=60)
    @given(
        seed=st.integers(min_value=0, max_value=5000),
        extra=st.integers(min_value=0, max_value=9),
    )
    def test_enlarging_a_set_never_decreases_its_probability(self, seed, extra):
        rng = np.random.default_rng(seed)
        response = response_from_probs(rng.uniform(0.01, 1.0, size=10))
        base_ids = tuple(int(i) for i in rng.choice(10, size=3, replace=False))
        small = LabelTokenSet(classes=("y",), sets={"y": base_ids})
        enlarged_ids = tuple(sorted(set(base_ids) | {extra}))
        big = LabelTokenSet(classes=("y",), sets={"y": enlarged_ids})
        p_small = marginal_class_probs(response, small).probs["y"]
        p_big = marginal_class_probs(response, big).probs["y"]
        assert p_big >= p_small - 1e-15

    def test_matches_naive_recomputation(self):
        rng = np.random.default_rng(7)
        response = response_from_probs(rng.uniform(0.01, 1.0, size=20))
        sets = {"a": (0, 5, 7), "b": (1, 2), "c": (19,)}
        got = marginal_class_probs(
            response, LabelTokenSet(classes=("a", "b", "c"), sets=sets)
        ).probs
        want = oracles.naive_marginals(response.mask_log_probs, sets)
        assert got == want


class TestClassify:
    def test_argmax(self):
        assert classify(ClassProbs({"pos": 0.40, "neg": 0.25})) == "pos"

    def test_tie_breaks_lexicographically(self):
        assert classify(ClassProbs({"b": 0.3, "a": 0.3})) == "a"

    def test_positive_scaling_invariance(self):
        probs = {"x": 0.4, "y": 0.25, "z": 0.1}
        scaled = {k: v * 0.5 for k, v in probs.items()}
        assert classify(ClassProbs(probs)) == classify(ClassProbs(scaled))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            classify(ClassProbs({}))


class TestRanking:
    def test_counting_example(self):
        response = OracleResponse(mask_log_probs=np.array([-1.0, -0.5, -2.0]))
        assert rank_of_gold(response, 0) == 2

    def test_unique_maximum_ranks_first(self):
        response = OracleResponse(mask_log_probs=np.array([-1.0, -0.5, -2.0]))
        assert rank_of_gold(response, 1) == 1

    def test_all_equal_ties_by_id(self):
        response = OracleResponse(mask_log_probs=np.full(10, -np.log(10.0)))
        assert rank_of_gold(response, 3) == 4

    @settings(max_examples=100)
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        gold=st.integers(min_value=0, max_value=14),
    )
    def test_matches_naive_rank(self, seed, gold):
        rng = np.random.default_rng(seed)
        lp = rng.integers(-4, 0, size=15).astype(float)  # ties are common
        response = OracleResponse(mask_log_probs=lp)
        assert rank_of_gold(response, gold) == oracles.naive_rank(lp, gold)

    def test_metric_arithmetic(self):
        report = ranking_metrics([1, 2, 10])
        assert abs(report.mrr - (1 + 0.5 + 0.1) / 3) < 1e-12
        assert abs(report.p_at_1 - 1 / 3) < 1e-12
        assert report.p_at_10 == 1.0

    def test_perfect_ranks(self):
        report = ranking_metrics([1, 1, 1])
        assert (report.mrr, report.p_at_1, report.p_at_10) == (1.0, 1.0, 1.0)

    def test_invalid_ranks_rejected(self):
        with pytest.raises(DataError):
            ranking_metrics([])
        with pytest.raises(DataError):
            ranking_metrics([0, 1])

    def test_report_bounds_enforced(self):
        with pytest.raises(ConfigError):
            RankReport(mrr=0.2, p_at_1=0.5, p_at_10=0.4, n=10)

    @settings(max_examples=60)
    @given(seed=st.integers(min_value=0, max_value=5000))
    def test_matches_naive_metrics_bit_for_bit(self, seed):
        rng = np.random.default_rng(seed)
        ranks = [int(r) for r in rng.integers(1, 50, size=200)]
        report = ranking_metrics(ranks)
        mrr, p1, p10 = oracles.naive_rank_metrics(ranks)
        assert (report.mrr, report.p_at_1, report.p_at_10) == (mrr, p1, p10)


class TestPerClassPrecision:
    def test_counting_example(self):
        got = per_class_precision([("con", "con"), ("con", "ent"), ("ent", "ent")])
        assert got == {"con": 0.5, "ent": 1.0}

    def test_all_correct(self):
        got = per_class_precision([("a", "a"), ("b", "b"), ("a", "a")])
        assert got == {"a": 1.0, "b": 1.0}

    def test_never_predicted_class_absent(self):
        got = per_class_precision([("a", "b"), ("a", "a")])
        assert "b" not in got

    @settings(max_examples=40)
    @given(seed=st.integers(min_value=0, max_value=5000))
    def test_matches_confusion_oracle(self, seed):
        rng = np.random.default_rng(seed)
        names = ["x", "y", "z"]
        pairs = [
            (names[int(a)], names[int(b)])
            for a, b in zip(rng.integers(3, size=300), rng.integers(3, size=300))
        ]
        assert per_class_precision(pairs) == oracles.naive_per_class_precision(pairs)


def make_fact(i, obj, vocab_size=200):
    return FactInstance(
        subject=f"sub{i:03d}",
        relation="born-in",
        object_canonical=obj,
        object_token=i % vocab_size,
        context_sentences=(f"sub{i:03d} was born in {obj} in 1974 .",),
        surface_forms=frozenset(),
    )


class TestCreditRule:
    def test_surface_form_counts(self):
        fact = FactInstance(
            subject="s", relation="r", object_canonical="USA", object_token=0,
            surface_forms=frozenset({"American"}),
        )
        assert re_credit("American", fact)

    def test_canonical_counts_without_surfaces(self):
        fact = FactInstance(
            subject="s", relation="r", object_canonical="USA", object_token=0
        )
        assert re_credit("USA", fact)

    def test_mismatch_fails(self):
        fact = FactInstance(
            subject="s", relation="r", object_canonical="USA", object_token=0,
            surface_forms=frozenset({"American"}),
        )
        assert not re_credit("Canada", fact)

    def test_whitespace_trimmed_but_case_kept(self):
        fact = FactInstance(
            subject="s", relation="r", object_canonical="USA", object_token=0
        )
        assert re_credit("  USA ", fact)
        assert not re_credit("usa", fact)


class TestPerturbation:
    def test_two_facts_swap_objects(self):
        facts = [make_fact(0, "Yokohama"), make_fact(1, "Yorkshire")]
        out = perturb_facts(facts, seed=0)
        assert out[0].object_canonical == "Yorkshire"
        assert out[1].object_canonical == "Yokohama"
        assert "Yorkshire" in out[0].context_sentences[0]
        assert "Yokohama" not in out[0].context_sentences[0]

    def test_gold_token_follows_object(self):
        facts = [make_fact(0, "Yokohama"), make_fact(1, "Yorkshire")]
        out = perturb_facts(facts, seed=0)
        assert out[0].object_token == facts[1].object_token
        assert out[1].object_token == facts[0].object_token

    def test_scan_500_facts(self):
        # Zero-padded names so no object is a token of another.
        objects = [f"obj{i:02d}" for i in range(30)]
        facts = [make_fact(i, objects[i % 30]) for i in range(500)]
        out = perturb_facts(facts, seed=42)
        assert len(out) == 500
        for before, after in zip(facts, out):
            assert after.object_canonical != before.object_canonical
            for sentence in after.context_sentences:
                tokens = sentence.split()
                assert after.object_canonical in tokens
                assert before.object_canonical not in tokens

    def test_deterministic(self):
        facts = [make_fact(i, f"obj{i % 7:02d}") for i in range(40)]
        a = perturb_facts(facts, seed=9)
        b = perturb_facts(facts, seed=9)
        assert a == b

    def test_all_objects_identical_rejected(self):
        facts = [make_fact(i, "same") for i in range(5)]
        with pytest.raises(DataError):
            perturb_facts(facts, seed=0)


def fact_vocab():
    strings = ("[MASK]", "sub0", "sub1", "rel0", "rel1", "obj0", "obj1", "w0", "w1")
    return Vocabulary(strings=strings, mask_id=0, special_ids=frozenset({0}))


def token_fact(vocab, sub, rel, obj):
    return FactInstance(
        subject=sub,
        relation=rel,
        object_canonical=obj,
        object_token=vocab.id_of(obj),
        context_sentences=(f"{sub} {rel} {obj}",),
    )


class TestInputsForFact:
    def test_sub_rel_mapping(self):
        fact = token_fact(fact_vocab(), "sub0", "rel0", "obj0")
        template = parse_template("{sub} {rel} [T] [P]")
        assert inputs_for_fact(fact, template) == {"sub": "sub0", "rel": "rel0"}

    def test_context_field_takes_first_sentence(self):
        fact = token_fact(fact_vocab(), "sub0", "rel0", "obj0")
        template = parse_template("{sent} [P]")
        assert inputs_for_fact(fact, template) == {"sent": "sub0 rel0 obj0"}

    def test_context_field_without_context_rejected(self):
        fact = FactInstance(
            subject="s", relation="r", object_canonical="o", object_token=0
        )
        with pytest.raises(DataError):
            inputs_for_fact(fact, parse_template("{sent} [P]"))

    def test_unknown_field_rejected(self):
        fact = token_fact(fact_vocab(), "sub0", "rel0", "obj0")
        with pytest.raises(ConfigError):
            inputs_for_fact(fact, parse_template("{mystery} [P]"))


class TestClassificationMetricsParity:
    def test_matches_hand_rolled_loop(self):
        vocab = tiny_vocab(8)
        model = random_toy(vocab, dim=4, seed=11)
        params = oracles.params_of(model)
        labels = LabelTokenSet(classes=("a", "b"), sets={"a": (1, 2), "b": (3, 4)})
        rng = np.random.default_rng(5)
        prompts = []
        for i in range(30):
            body = tuple(int(t) for t in rng.integers(1, 8, size=3))
            prompts.append((prompt_of(body + (0,), 3), "a" if i % 2 else "b"))

        report = classification_metrics(model, prompts, labels)

        pairs = []
        for prompt, gold in prompts:
            lp = oracles.toy_forward_log_probs(*params, prompt.token_ids)
            marg = oracles.naive_marginals(lp, labels.sets)
            pred = min(marg, key=lambda c: (-marg[c], c))
            pairs.append((pred, gold))
        accuracy = sum(1 for p, g in pairs if p == g) / len(pairs)
        assert report.predictions == pairs
        assert report.accuracy == accuracy
        assert report.per_class_precision == oracles.naive_per_class_precision(pairs)

    def test_empty_rejected(self):
        vocab = tiny_vocab(5)
        model = random_toy(vocab, dim=3, seed=0)
        labels = LabelTokenSet(classes=("a",), sets={"a": (1,)})
        with pytest.raises(DataError):
            classification_metrics(model, [], labels)


class TestFactRankReports:
    def test_matches_direct_rank_computation(self):
        vocab = fact_vocab()
        model = random_toy(vocab, dim=4, seed=3)
        template = parse_template("{sub} {rel} [T] [P]")
        triggers = (7,)
        facts = {
            "rel0": [
                token_fact(vocab, "sub0", "rel0", "obj0"),
                token_fact(vocab, "sub1", "rel0", "obj1"),
                token_fact(vocab, "sub0", "rel0", "obj1"),
            ],
            "rel1": [token_fact(vocab, "sub1", "rel1", "obj0")],
        }
        reports = fact_rank_reports(model, template, triggers, facts)

        params = oracles.params_of(model)
        want = {}
        for relation, rel_facts in facts.items():
            ranks = []
            for fact in rel_facts:
                ids = (
                    vocab.id_of(fact.subject),
                    vocab.id_of(fact.relation),
                    triggers[0],
                    vocab.mask_id,
                )
                lp = oracles.toy_forward_log_probs(*params, ids)
                ranks.append(oracles.naive_rank(lp, fact.object_token))
            want[relation] = oracles.naive_rank_metrics(ranks)

        for relation, (mrr, p1, p10) in want.items():
            got = reports[relation]
            assert (got.mrr, got.p_at_1, got.p_at_10) == (mrr, p1, p10)
        macro = reports["macro"]
        assert macro.n == 4
        assert macro.mrr == pytest.approx(
            (reports["rel0"].mrr + reports["rel1"].mrr) / 2, abs=1e-15
        )

    def test_empty_rejected(self):
        vocab = fact_vocab()
        model = random_toy(vocab, dim=4, seed=3)
        with pytest.raises(DataError):
            fact_rank_reports(model, parse_template("{sub} [P]"), (), {})


class TestTopTokenPredictor:
    def test_returns_argmax_surface(self):
        vocab = fact_vocab()
        model = random_toy(vocab, dim=4, seed=3)
        template = parse_template("{sub} {rel} [T] [P]")
        predict = oracle_top_token_predictor(model, template, (7,))
        fact = token_fact(vocab, "sub0", "rel0", "obj0")
        ids = (vocab.id_of("sub0"), vocab.id_of("rel0"), 7, vocab.mask_id)
        response = model.query(OracleRequest(prompt=prompt_of(ids, 3)))
        want = vocab.string_of(int(np.argmax(response.mask_log_probs)))
        assert predict(fact) == want

    def test_re_accuracy_of_copying_predictor(self):
        facts = [make_fact(i, f"obj{i % 4:02d}") for i in range(20)]
        copier = lambda fact: fact.context_sentences[0].split()[-4]
        assert re_accuracy(copier, facts) == 1.0
        assert re_accuracy(lambda fact: "never", facts) == 0.0


class TestReportFiles:
    def test_rank_csv_layout_and_determinism(self, tmp_path):
        reports = {
            "rel0": ranking_metrics([1, 2, 10]),
            "macro": ranking_metrics([1, 2, 10]),
        }
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rank_csv(a, reports)
        write_rank_csv(b, reports)
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text().splitlines()
        assert lines[0] == "relation,n,mrr,p_at_1,p_at_10"
        assert lines[1].startswith("macro,3,0.533333")

    def test_classification_csv_layout(self, tmp_path):
        vocab = tiny_vocab(8)
        model = random_toy(vocab, dim=4, seed=11)
        labels = LabelTokenSet(classes=("a", "b"), sets={"a": (1,), "b": (2,)})
        prompts = [(prompt_of((1, 2, 0), 2), "a"), (prompt_of((2, 1, 0), 2), "b")]
        report = classification_metrics(model, prompts, labels)
        path = tmp_path / "cls.csv"
        write_classification_csv(path, report)
        lines = path.read_text().splitlines()
        assert lines[0] == "class,precision"
        assert lines[-1] == f"__accuracy__,{report.accuracy:.6f}"
