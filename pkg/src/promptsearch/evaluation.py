"""Task evaluation: classification by label marginals, gold-token ranking,
the relation-extraction credit rule, and the perturbed-facts transform.

Classification sums mask probabilities over each class's label tokens and
predicts the argmax class. Fact retrieval ranks the gold object token in
the mask distribution and aggregates mean reciprocal rank and precision
at 1 and 10 per relation. The perturbation swaps every fact's object for
a random different one, in both the gold answer and the context text, to
separate reading-from-context from memorization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .labels import LabelTokenSet
from .oracle import MlmOracle, OracleRequest, OracleResponse
from .templates import Template, render_prompt
from .vocab import Vocabulary


@dataclass(frozen=True)
class ClassProbs:
    """Per-class probabilities; need not sum to 1 when label sets overlap."""

    probs: dict[str, float]

    def __post_init__(self):
        for label, p in self.probs.items():
            if not (0.0 <= p <= 1.0 + 1e-9):
                raise ConfigError(f"class probability for {label!r} out of range: {p}")


@dataclass(frozen=True)
class RankReport:
    mrr: float
    p_at_1: float
    p_at_10: float
    n: int

    def __post_init__(self):
        slack = 1e-12
        if not (0.0 <= self.p_at_1 <= self.p_at_10 + slack <= 1.0 + 2 * slack):
            raise ConfigError("precision bounds violated")
        if not (self.p_at_1 - slack <= self.mrr <= 1.0 + slack):
            raise ConfigError("reciprocal-rank bounds violated")


@dataclass(frozen=True)
class FactInstance:
    """A (subject, relation, object) triple with optional context text."""

    subject: str
    relation: str
    object_canonical: str
    object_token: int
    context_sentences: tuple[str, ...] = ()
    surface_forms: frozenset[str] = frozenset()

    def validate_single_token(self, vocab: Vocabulary) -> None:
        if not (0 <= self.object_token < vocab.size):
            raise DataError(
                f"object token {self.object_token} for {self.object_canonical!r} "
                f"is outside the vocabulary"
            )


# ----------------------------------------------------------------------
# classification


def marginal_class_probs(response: OracleResponse, labels: LabelTokenSet) -> ClassProbs:
    """Class probability = summed mask probability of its label tokens."""
    probs = np.exp(response.mask_log_probs)
    return ClassProbs(
        probs={label: float(probs[list(ids)].sum()) for label, ids in labels.sets.items()}
    )


def classify(probs: ClassProbs) -> str:
    """Argmax class; equal probabilities go to the alphabetically first label."""
    if not probs.probs:
        raise ConfigError("no class probabilities to classify")
    return min(probs.probs, key=lambda label: (-probs.probs[label], label))


@dataclass
class ClassificationReport:
    accuracy: float
    n: int
    per_class_precision: dict[str, float]
    predictions: list[tuple[str, str]] = field(default_factory=list)


def classification_metrics(
    oracle: MlmOracle, prompts, labels: LabelTokenSet
) -> ClassificationReport:
    """Classify each (prompt, gold label) pair and tally accuracy."""
    if not prompts:
        raise DataError("no prompts to evaluate")
    pairs = []
    for prompt, gold in prompts:
        response = oracle.query(OracleRequest(prompt=prompt))
        pairs.append((classify(marginal_class_probs(response, labels)), gold))
    correct = sum(1 for pred, gold in pairs if pred == gold)
    return ClassificationReport(
        accuracy=correct / len(pairs),
        n=len(pairs),
        per_class_precision=per_class_precision(pairs),
        predictions=pairs,
    )


def per_class_precision(predictions) -> dict[str, float]:
    """Fraction correct among predictions of each class actually predicted."""
    if not predictions:
        raise DataError("no predictions to score")
    predicted_counts: dict[str, int] = {}
    correct_counts: dict[str, int] = {}
    for pred, gold in predictions:
        predicted_counts[pred] = predicted_counts.get(pred, 0) + 1
        if pred == gold:
            correct_counts[pred] = correct_counts.get(pred, 0) + 1
    return {
        label: correct_counts.get(label, 0) / count
        for label, count in predicted_counts.items()
    }


# ----------------------------------------------------------------------
# ranking


def rank_of_gold(response: OracleResponse, gold: int) -> int:
    """1-based rank of the gold token; ties rank the lower id first."""
    lp = response.mask_log_probs
    if not (0 <= gold < lp.shape[0]):
        raise ConfigError(f"gold token {gold} outside the vocabulary")
    higher = int((lp > lp[gold]).sum())
    equal_before = int((lp[:gold] == lp[gold]).sum())
    return 1 + higher + equal_before


def ranking_metrics(ranks) -> RankReport:
    ranks = list(ranks)
    if not ranks:
        raise DataError("no ranks to aggregate")
    if any(r < 1 for r in ranks):
        raise DataError("ranks must be 1-based")
    n = len(ranks)
    return RankReport(
        mrr=float(sum(1.0 / r for r in ranks) / n),
        p_at_1=float(sum(1 for r in ranks if r <= 1) / n),
        p_at_10=float(sum(1 for r in ranks if r <= 10) / n),
        n=n,
    )


def inputs_for_fact(fact: FactInstance, template: Template) -> dict[str, str]:
    """Field map for rendering a fact prompt, driven by the template's fields.

    ``sub`` and ``rel`` come from the triple; ``sent`` or ``context``
    takes the first context sentence.
    """
    inputs: dict[str, str] = {}
    for name in template.field_names:
        if name == "sub":
            inputs[name] = fact.subject
        elif name == "rel":
            inputs[name] = fact.relation
        elif name in ("sent", "context"):
            if not fact.context_sentences:
                raise DataError(
                    f"template needs context text but fact "
                    f"({fact.subject!r}, {fact.relation!r}) has none"
                )
            inputs[name] = fact.context_sentences[0]
        else:
            raise ConfigError(f"template field {name!r} has no fact counterpart")
    return inputs


def fact_rank_reports(
    oracle: MlmOracle,
    template: Template,
    triggers,
    facts_by_relation: dict[str, list[FactInstance]],
    max_length: int | None = None,
) -> dict[str, RankReport]:
    """Per-relation rank reports plus a ``macro`` unweighted average."""
    if not facts_by_relation:
        raise DataError("no facts to evaluate")
    reports: dict[str, RankReport] = {}
    for relation in sorted(facts_by_relation):
        ranks = []
        for fact in facts_by_relation[relation]:
            prompt = render_prompt(
                template, inputs_for_fact(fact, template), triggers, oracle.vocab, max_length
            )
            response = oracle.query(OracleRequest(prompt=prompt))
            ranks.append(rank_of_gold(response, fact.object_token))
        reports[relation] = ranking_metrics(ranks)
    per_relation = list(reports.values())
    reports["macro"] = RankReport(
        mrr=float(np.mean([r.mrr for r in per_relation])),
        p_at_1=float(np.mean([r.p_at_1 for r in per_relation])),
        p_at_10=float(np.mean([r.p_at_10 for r in per_relation])),
        n=sum(r.n for r in per_relation),
    )
    return reports


# ----------------------------------------------------------------------
# relation-extraction credit rule and perturbation


def re_credit(prediction: str, fact: FactInstance) -> bool:
    """Correct iff the trimmed prediction matches the canonical object or
    any surface form seen in the fact's context sentences."""
    trimmed = prediction.strip()
    return trimmed == fact.object_canonical or trimmed in fact.surface_forms


def re_accuracy(predict, facts) -> float:
    """Credit-rule accuracy of ``predict`` (fact -> string) over ``facts``."""
    facts = list(facts)
    if not facts:
        raise DataError("no facts to score")
    return sum(1 for fact in facts if re_credit(predict(fact), fact)) / len(facts)


def oracle_top_token_predictor(
    oracle: MlmOracle, template: Template, triggers, max_length: int | None = None
):
    """Predictor returning the surface of the most probable mask filler."""

    def predict(fact: FactInstance) -> str:
        prompt = render_prompt(
            template, inputs_for_fact(fact, template), triggers, oracle.vocab, max_length
        )
        response = oracle.query(OracleRequest(prompt=prompt))
        # argmax with lower id winning ties
        return oracle.vocab.string_of(int(np.argmax(response.mask_log_probs)))

    return predict


def _rewrite(sentence: str, old_forms, new_form: str) -> str:
    # Longer forms first so substrings of other forms never clobber them.
    for form in sorted(old_forms, key=len, reverse=True):
        if form:
            sentence = sentence.replace(form, new_form)
    return sentence


def perturb_facts(facts, seed: int) -> list[FactInstance]:
    """Give every fact a uniformly drawn *different* object.

    The replacement object's canonical form is written over the old
    object (canonical and surface forms) in every context sentence, and
    the gold token is updated, so only a model that actually reads the
    context can stay correct.
    """
    facts = list(facts)
    objects: dict[str, int] = {}
    for fact in facts:
        objects.setdefault(fact.object_canonical, fact.object_token)
    names = sorted(objects)
    if len(names) < 2:
        raise DataError("perturbation needs at least two distinct objects")

    rng = np.random.default_rng(seed)
    out = []
    for fact in facts:
        others = [name for name in names if name != fact.object_canonical]
        new_name = others[int(rng.integers(len(others)))]
        old_forms = {fact.object_canonical, *fact.surface_forms}
        out.append(
            FactInstance(
                subject=fact.subject,
                relation=fact.relation,
                object_canonical=new_name,
                object_token=objects[new_name],
                context_sentences=tuple(
                    _rewrite(s, old_forms, new_name) for s in fact.context_sentences
                ),
                surface_forms=frozenset(),
            )
        )
    return out


# ----------------------------------------------------------------------
# report files


def write_rank_csv(path, reports: dict[str, RankReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["relation", "n", "mrr", "p_at_1", "p_at_10"])
        for relation in sorted(reports):
            r = reports[relation]
            writer.writerow([relation, r.n, f"{r.mrr:.6f}", f"{r.p_at_1:.6f}", f"{r.p_at_10:.6f}"])


def write_classification_csv(path, report: ClassificationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision"])
        for label in sorted(report.per_class_precision):
            writer.writerow([label, f"{report.per_class_precision[label]:.6f}"])
        writer.writerow(["__accuracy__", f"{report.accuracy:.6f}"])


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
