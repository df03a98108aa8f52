"""Templates: from a text pattern to a concrete token-id prompt.

A template mixes three kinds of slots: named input fields like {sent},
trigger slots [T] that the search will optimize, and one predict slot [P]
where the model fills in its answer. Rendering binds an example's fields,
the current trigger tokens, and the mask token into a single id sequence
with bookkeeping for where everything landed.
"""

from promptsearch import Vocabulary, parse_template, render_prompt


def main():
    vocab = Vocabulary(
        strings=("[MASK]", "the", "movie", "was", "fun", "dull", "really", "so"),
        mask_id=0,
        special_ids=frozenset({0}),
    )

    template = parse_template("{sent} [T] [T] [P]")
    print("template text:   {sent} [T] [T] [P]")
    print("field names:    ", template.field_names)
    print("trigger count:  ", template.trigger_count)

    prompt = render_prompt(
        template, {"sent": "the movie was fun"}, [vocab.mask_id] * 2, vocab
    )
    print("\nall-mask triggers (how every search starts):")
    print("  ids:          ", prompt.token_ids)
    print("  surfaces:     ", vocab.decode(prompt.token_ids))
    print("  triggers at:  ", prompt.trigger_positions)
    print("  mask at:      ", prompt.mask_position)
    print("  input span:   ", sorted(prompt.input_span))

    # swapping a trigger is positional surgery, nothing is re-tokenized
    swapped = prompt.with_trigger(1, vocab.id_of("really"))
    print("\nafter placing 'really' in trigger slot 1:")
    print("  surfaces:     ", vocab.decode(swapped.token_ids))

    # a length budget drops input tokens from the end, never structure
    short = render_prompt(
        template, {"sent": "the movie was fun"}, [vocab.mask_id] * 2, vocab, max_length=6
    )
    print("\nsame example under max_length=6:")
    print("  surfaces:     ", vocab.decode(short.token_ids))
    print("  input span:   ", sorted(short.input_span))


if __name__ == "__main__":
    main()
