"""Fact probing: rank metrics, and a perturbation that catches cheating.

A fact prompt asks the model to fill the object of a (subject, relation)
pair; the gold token's rank yields MRR and precision at k. The second
half swaps every fact's object for a different one and rewrites the
context sentences to match. A predictor that genuinely reads its context
keeps its score on the perturbed set, while one that memorized the
original objects collapses, and the credit rule tells them apart.
"""

from promptsearch import (
    FactInstance,
    OracleRequest,
    PromptInstance,
    Vocabulary,
    fact_rank_reports,
    parse_template,
    perturb_facts,
    random_toy,
    rank_of_gold,
    re_accuracy,
)


def toy_world():
    strings = (
        "[MASK]", "the", "capital", "of", "is", "in", "was", "born",
        "france", "england", "italy", "paris", "london", "rome",
    )
    vocab = Vocabulary(strings=strings, mask_id=0, special_ids=frozenset({0}))
    facts = [
        FactInstance(
            subject=sub, relation="capital-of", object_canonical=obj,
            object_token=vocab.id_of(obj),
            context_sentences=(f"the capital of {sub} is {obj}",),
        )
        for sub, obj in (("france", "paris"), ("england", "london"), ("italy", "rome"))
    ]
    return vocab, facts


def main():
    vocab, facts = toy_world()
    model = random_toy(vocab, dim=6, seed=5)
    template = parse_template("the capital of {sub} is [P]")

    reports = fact_rank_reports(model, template, (), {"capital-of": facts})
    for name, report in reports.items():
        print(f"{name:<12} n={report.n}  mrr={report.mrr:.3f}  "
              f"p@1={report.p_at_1:.3f}  p@10={report.p_at_10:.3f}")

    # rank of one gold token, shown the long way
    prompt = PromptInstance(
        token_ids=tuple(vocab.encode("the capital of france is") + [vocab.mask_id]),
        trigger_positions=(), mask_position=5, input_span=frozenset(range(5)),
    )
    response = model.query(OracleRequest(prompt=prompt))
    print(f"\ngold 'paris' ranks {rank_of_gold(response, vocab.id_of('paris'))} "
          f"of {vocab.size} under the random toy")

    perturbed = perturb_facts(facts, seed=42)
    print("\nperturbation (object always changes, context follows):")
    for before, after in zip(facts, perturbed):
        print(f"  {before.subject}: {before.object_canonical} -> {after.object_canonical}"
              f"   context: {after.context_sentences[0]!r}")

    def copies_context(fact):
        return fact.context_sentences[0].split()[-1]

    memorized = {fact.subject: fact.object_canonical for fact in facts}

    def recalls_original(fact):
        return memorized[fact.subject]

    print(f"\ncontext-copying predictor on perturbed facts: "
          f"{re_accuracy(copies_context, perturbed):.2f}")
    print(f"object-memorizing predictor on perturbed facts: "
          f"{re_accuracy(recalls_original, perturbed):.2f}")


if __name__ == "__main__":
    main()
