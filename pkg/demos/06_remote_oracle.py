"""The oracle over TCP: same answers, now through the framed protocol.

A server process exports its vocabulary to a file once; clients load
that file and verify its fingerprint against the server's hello frame,
so both sides provably agree on token ids before any query. This script
serves the toy model in a background thread, connects the remote client,
and shows that a query and a whole search run behave identically to the
in-process oracle. The `mlm-server` package serves real pretrained
checkpoints behind the very same frames.
"""

import tempfile
from pathlib import Path

import numpy as np

from promptsearch import (
    ExampleStream,
    LabelTokenSet,
    OracleRequest,
    OracleServer,
    RemoteOracle,
    SearchConfig,
    SyntheticSpec,
    Vocabulary,
    gen_synthetic_sentiment,
    parse_template,
    probe_prompts,
    run_search,
    train_toy,
)


def main():
    task = gen_synthetic_sentiment(SyntheticSpec(), 120, seed=2)
    model = train_toy(task.corpus, task.vocab, dim=8, steps=120, learning_rate=0.5, seed=1)

    # out-of-band vocabulary hand-off, as a real deployment would do it
    vocab_file = Path(tempfile.mkdtemp()) / "vocab.json"
    task.vocab.to_file(vocab_file)

    with OracleServer(model) as server:
        print(f"serving toy oracle on {server.host}:{server.port}")
        vocab = Vocabulary.from_file(vocab_file)
        with RemoteOracle(server.host, server.port, vocab) as oracle:
            print("fingerprint verified, hidden dim", oracle.hidden_dim)

            template = parse_template("{sent} [T] [T] [P]")
            prompt, label = probe_prompts(template, task.dataset.examples[:1], vocab)[0]
            request = OracleRequest(
                prompt=prompt,
                label_token_ids=task.pools[label],
                grad_positions=prompt.trigger_positions,
            )
            local = model.query(request)
            wired = oracle.query(request)
            print("distributions identical over the wire:",
                  bool(np.array_equal(local.mask_log_probs, wired.mask_log_probs)))
            print("gradients identical over the wire:   ",
                  all(np.array_equal(local.grads[p], wired.grads[p]) for p in local.grads))

            labels = LabelTokenSet(
                classes=("neg", "pos"),
                sets={"pos": task.pools["pos"], "neg": task.pools["neg"]},
            )
            config = SearchConfig(
                candidate_k=5, trigger_len=2, iterations=4,
                candidate_batch=8, eval_batch=8, seed=0,
            )
            examples = task.dataset.examples
            remote_result = run_search(
                oracle, ExampleStream(examples[:96], seed=0), examples[96:],
                labels, template, config,
            )
        local_result = run_search(
            model, ExampleStream(examples[:96], seed=0), examples[96:],
            labels, template, config,
        )
        print("search over the wire matches in-process search:",
              remote_result.best_triggers == local_result.best_triggers
              and remote_result.best_dev_metric == local_result.best_dev_metric)


if __name__ == "__main__":
    main()
