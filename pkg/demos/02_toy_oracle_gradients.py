"""The built-in analytic oracle: distributions and exact slot gradients.

The toy model mean-pools input embeddings over non-special positions,
applies one dense layer, and scores the result against output embeddings.
Because the whole thing is closed form, its gradient of the label
log-likelihood with respect to any slot's input embedding is analytic,
which the finite-difference check at the end makes visible.
"""

import numpy as np

from promptsearch import (
    EmbeddingView,
    OracleRequest,
    PromptInstance,
    ToyMlm,
    Vocabulary,
    label_log_likelihood,
    random_toy,
)


def main():
    strings = ("[MASK]",) + tuple(f"w{i}" for i in range(11))
    vocab = Vocabulary(strings=strings, mask_id=0, special_ids=frozenset({0}))
    model = random_toy(vocab, dim=4, seed=3)

    prompt = PromptInstance(
        token_ids=(2, 5, 9, 0),
        trigger_positions=(2,),
        mask_position=3,
        input_span=frozenset({0, 1}),
    )
    labels = (4, 7)

    response = model.query(
        OracleRequest(prompt=prompt, label_token_ids=labels, grad_positions=(2,))
    )
    probs = np.exp(response.mask_log_probs)
    print("prompt:                ", vocab.decode(prompt.token_ids))
    print("distribution sums to:  ", f"{probs.sum():.12f}")
    top = np.argsort(-probs)[:3]
    print("top tokens:            ", [(vocab.string_of(int(t)), f"{probs[t]:.3f}") for t in top])
    print("label set {w3, w6} ll: ", f"{label_log_likelihood(response.mask_log_probs, labels):.6f}")

    grad = response.grads[2]
    print("\ngradient at trigger slot (position 2):", np.round(grad, 6))

    # nudge the trigger token's embedding along the gradient and re-measure:
    # the likelihood must move by step * |grad|^2 to first order
    step = 1e-6
    view = model.embedding_view()
    shifted = view.input_embeddings.copy()
    shifted[prompt.token_ids[2]] += step * grad
    nudged = ToyMlm(
        vocab=vocab,
        embeddings=EmbeddingView(
            input_embeddings=shifted, output_embeddings=view.output_embeddings
        ),
        context_map=model.context_map,
        bias=model.bias,
        nonlinearity=model.nonlinearity,
    )
    before = label_log_likelihood(response.mask_log_probs, labels)
    after_response = nudged.query(OracleRequest(prompt=prompt, label_token_ids=labels))
    after = label_log_likelihood(after_response.mask_log_probs, labels)
    predicted = step * float(grad @ grad)
    print("measured likelihood change: ", f"{after - before:.3e}")
    print("first-order prediction:     ", f"{predicted:.3e}")


if __name__ == "__main__":
    main()
