"""Automated label tokens: letting the model name its own classes.

Instead of hand-picking which vocabulary tokens stand for "positive" and
"negative", the pipeline probes every training example with all-mask
triggers, collects the hidden state at the predict slot, fits a logistic
classifier on those hiddens, and then scores every vocabulary token by
how strongly its output embedding activates each class. The top-k tokens
per class become that class's label set.
"""

from promptsearch import (
    SyntheticSpec,
    build_token_filter,
    collect_mask_hiddens,
    fit_logistic,
    gen_synthetic_sentiment,
    parse_template,
    probe_prompts,
    select_label_sets,
    train_toy,
)


def main():
    task = gen_synthetic_sentiment(SyntheticSpec(), 200, seed=11)
    model = train_toy(task.corpus, task.vocab, dim=8, steps=200, learning_rate=0.5, seed=1)
    template = parse_template("{sent} [T] [T] [T] [P]")
    train = task.dataset.examples[:160]

    prompts = probe_prompts(template, train, task.vocab)
    hiddens = collect_mask_hiddens(model, prompts)
    print(f"collected {len(hiddens)} mask hidden states of dim {hiddens[0][0].shape[0]}")

    classifier = fit_logistic(hiddens, l2=1e-3, steps=300, seed=0)
    print("classifier classes:", classifier.classes)

    token_filter = build_token_filter(task.vocab)
    for k in (1, 3):
        labels = select_label_sets(
            classifier, model.embedding_view(), k, token_filter, task.vocab
        )
        rendered = {
            cls: [task.vocab.string_of(t) for t in labels.sets[cls]]
            for cls in labels.classes
        }
        print(f"k={k} label sets:", rendered)

    # ground truth for this synthetic task: each polarity owns a word pool
    truth = {cls: sorted(task.vocab.string_of(t) for t in pool)
             for cls, pool in task.pools.items()}
    print("generator's own pools:", truth)


if __name__ == "__main__":
    main()
