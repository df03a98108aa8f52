"""Dataset ingestion, splitting, subsampling, and a synthetic task.

Classification data arrives as TSV (sentence-label or premise-hypothesis
pairs), facts as JSONL triples. Splits and subsamples are deterministic
under a seed. The synthetic sentiment generator builds a desk-scale task
whose label is a deterministic function of the sentence, so a perfect
prompt exists and search quality is measurable against Bayes accuracy 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import FactInstance
from .vocab import Vocabulary

TSV_SENTENCE_LABEL = "tsv-sentence-label"
PAIR_TSV = "pair-tsv"


@dataclass(frozen=True)
class ClassificationDataset:
    examples: tuple
    classes: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        class_set = set(self.classes)
        fields = None
        for inputs, label in self.examples:
            if label not in class_set:
                raise DataError(f"label {label!r} not in class list {self.classes}")
            if fields is None:
                fields = set(inputs)
            elif set(inputs) != fields:
                raise DataError("inconsistent field names across examples")

    def __len__(self) -> int:
        return len(self.examples)

    def with_examples(self, examples) -> "ClassificationDataset":
        return ClassificationDataset(tuple(examples), self.classes, self.name)


@dataclass(frozen=True)
class FactDataset:
    facts_by_relation: dict[str, tuple[FactInstance, ...]]
    name: str = ""

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(sorted(self.facts_by_relation))

    @property
    def all_facts(self) -> list[FactInstance]:
        return [f for rel in self.relations for f in self.facts_by_relation[rel]]

    def __len__(self) -> int:
        return sum(len(v) for v in self.facts_by_relation.values())


# ----------------------------------------------------------------------
# loading


def load_classification(
    path,
    fmt: str = TSV_SENTENCE_LABEL,
    header: bool = False,
    label_whitelist=None,
    name: str = "",
) -> ClassificationDataset:
    """Read a tab-separated classification file.

    ``tsv-sentence-label`` rows are (sentence, label) and yield the field
    ``sent``; ``pair-tsv`` rows are (premise, hypothesis, label) and
    yield ``prem`` and ``hyp``. Class list is the sorted set of labels
    seen, or the whitelist when one is given.
    """
    if fmt == TSV_SENTENCE_LABEL:
        width, fields = 2, ("sent",)
    elif fmt == PAIR_TSV:
        width, fields = 3, ("prem", "hyp")
    else:
        raise ConfigError(f"unknown classification format {fmt!r}")

    examples = []
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            for row_number, row in enumerate(reader, start=1):
                if header and row_number == 1:
                    continue
                if not row:
                    continue
                if len(row) != width:
                    raise DataError(
                        f"{path}:{row_number}: expected {width} columns, got {len(row)}"
                    )
                *values, label = row
                if label_whitelist is not None and label not in label_whitelist:
                    raise DataError(f"{path}:{row_number}: unknown label {label!r}")
                examples.append((dict(zip(fields, values)), label))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not examples:
        raise DataError(f"{path}: empty dataset")
    classes = (
        tuple(sorted(label_whitelist))
        if label_whitelist is not None
        else tuple(sorted({label for _, label in examples}))
    )
    return ClassificationDataset(tuple(examples), classes, name or str(path))


def load_facts(
    path,
    vocab: Vocabulary | None = None,
    exclusion=None,
    max_per_relation: int | None = 1000,
    seed: int = 0,
    name: str = "",
) -> FactDataset:
    """Read JSONL fact triples grouped by relation.

    Each line holds {sub, rel, obj} plus optional obj_token, contexts,
    and surfaces. The gold token id comes from obj_token or, when a
    vocabulary is supplied, from looking up the object string, which
    also enforces the single-token constraint. Loading fails if any
    triple appears in the exclusion set. Relations larger than
    ``max_per_relation`` are uniformly subsampled under ``seed``.
    """
    exclusion = set(exclusion or ())
    grouped: dict[str, list[FactInstance]] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    sub, rel, obj = row["sub"], row["rel"], row["obj"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{line_number}: malformed fact: {exc}") from exc
                if (sub, rel, obj) in exclusion:
                    raise DataError(
                        f"{path}:{line_number}: triple ({sub!r}, {rel!r}, {obj!r}) "
                        f"is in the exclusion set"
                    )
                if "obj_token" in row:
                    token = int(row["obj_token"])
                elif vocab is not None:
                    if obj not in vocab:
                        raise DataError(
                            f"{path}:{line_number}: object {obj!r} is not a single "
                            f"vocabulary token"
                        )
                    token = vocab.id_of(obj)
                else:
                    raise DataError(
                        f"{path}:{line_number}: no obj_token and no vocabulary to resolve one"
                    )
                fact = FactInstance(
                    subject=sub,
                    relation=rel,
                    object_canonical=obj,
                    object_token=token,
                    context_sentences=tuple(row.get("contexts", ())),
                    surface_forms=frozenset(row.get("surfaces", ())),
                )
                if vocab is not None:
                    fact.validate_single_token(vocab)
                grouped.setdefault(rel, []).append(fact)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not grouped:
        raise DataError(f"{path}: empty dataset")

    rng = np.random.default_rng(seed)
    capped: dict[str, tuple[FactInstance, ...]] = {}
    for rel in sorted(grouped):
        facts = grouped[rel]
        if max_per_relation is not None and len(facts) > max_per_relation:
            keep = sorted(rng.choice(len(facts), size=max_per_relation, replace=False))
            facts = [facts[i] for i in keep]
        capped[rel] = tuple(facts)
    return FactDataset(capped, name or str(path))


# ----------------------------------------------------------------------
# splitting and subsampling

SCHEMES = {"80-20": (0.8, 0.2), "60-20-20": (0.6, 0.2, 0.2)}


def _part_sizes(n: int, fractions) -> list[int]:
    # Earlier parts round down; the last part absorbs the remainder.
    sizes = [int(n * f) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def _split_indices(n: int, fractions, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    sizes = _part_sizes(n, fractions)
    parts = []
    start = 0
    for size in sizes:
        parts.append(np.sort(order[start : start + size]))
        start += size
    return parts


def split(dataset, scheme: str, seed: int):
    """Partition a dataset; deterministic, disjoint, exhaustive.

    Fact datasets are split per relation, and facts sharing a
    (subject, object) pair always land in the same part so no pair leaks
    between train and evaluation.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown split scheme {scheme!r}")
    fractions = SCHEMES[scheme]
    rng = np.random.default_rng(seed)

    if isinstance(dataset, ClassificationDataset):
        n = len(dataset.examples)
        if n < len(fractions):
            raise DataError(f"dataset of {n} examples cannot be split {scheme}")
        parts = _split_indices(n, fractions, rng)
        return tuple(
            dataset.with_examples([dataset.examples[i] for i in idx]) for idx in parts
        )

    if isinstance(dataset, FactDataset):
        out = [dict() for _ in fractions]
        for rel in dataset.relations:
            facts = dataset.facts_by_relation[rel]
            groups: dict[tuple[str, str], list[FactInstance]] = {}
            for fact in facts:
                groups.setdefault((fact.subject, fact.object_canonical), []).append(fact)
            keys = sorted(groups)
            if len(keys) < len(fractions):
                raise DataError(
                    f"relation {rel!r} has {len(keys)} subject-object pairs, "
                    f"too few for a {scheme} split"
                )
            for part, idx in zip(out, _split_indices(len(keys), fractions, rng)):
                chosen = [f for i in idx for f in groups[keys[i]]]
                if chosen:
                    part[rel] = tuple(chosen)
        return tuple(FactDataset(part, dataset.name) for part in out)

    raise ConfigError(f"cannot split object of type {type(dataset).__name__}")


def subsample(
    train: ClassificationDataset,
    sizes,
    repeats: int,
    seed: int,
    stratified: bool = False,
) -> dict[int, list[ClassificationDataset]]:
    """Uniform subsets per size, ``repeats`` independent draws each."""
    n = len(train.examples)
    rng = np.random.default_rng(seed)
    out: dict[int, list[ClassificationDataset]] = {}
    for size in sizes:
        if size > n:
            raise DataError(f"subsample size {size} exceeds training size {n}")
        draws = []
        for _ in range(repeats):
            if stratified:
                idx = _stratified_indices(train, size, rng)
            else:
                idx = sorted(rng.choice(n, size=size, replace=False))
            draws.append(train.with_examples([train.examples[i] for i in idx]))
        out[int(size)] = draws
    return out


def _stratified_indices(train: ClassificationDataset, size: int, rng) -> list[int]:
    by_class: dict[str, list[int]] = {label: [] for label in train.classes}
    for i, (_, label) in enumerate(train.examples):
        by_class[label].append(i)
    n = len(train.examples)
    quotas = {label: int(size * len(idx) / n) for label, idx in by_class.items()}
    # Largest-remainder fill keeps the total exact.
    remainders = sorted(
        train.classes,
        key=lambda label: (-(size * len(by_class[label]) / n - quotas[label]), label),
    )
    shortfall = size - sum(quotas.values())
    for label in remainders[:shortfall]:
        quotas[label] += 1
    chosen: list[int] = []
    for label in train.classes:
        pool = by_class[label]
        take = min(quotas[label], len(pool))
        chosen.extend(int(pool[i]) for i in rng.choice(len(pool), size=take, replace=False))
    while len(chosen) < size:  # classes too small to meet quota: top up uniformly
        extra = int(rng.integers(n))
        if extra not in set(chosen):
            chosen.append(extra)
    return sorted(chosen)


class ExampleStream:
    """Deterministic shuffled minibatch source over a fixed example list.

    Produces epoch-style batches without replacement, reshuffling at each
    epoch boundary; state can be captured and restored for resumption.
    """

    def __init__(self, examples, seed: int):
        self._examples = list(examples)
        if not self._examples:
            raise DataError("example stream has no examples")
        self._rng = np.random.default_rng(seed)
        self._queue: list[int] = []

    def next_batch(self, size: int) -> list:
        if size < 1:
            raise ConfigError("batch size must be at least 1")
        batch = []
        while len(batch) < size:
            if not self._queue:
                self._queue = [int(i) for i in self._rng.permutation(len(self._examples))]
            batch.append(self._examples[self._queue.pop()])
        return batch

    def state_dict(self) -> dict:
        return {"rng_state": self._rng.bit_generator.state, "queue": list(self._queue)}

    def restore(self, state: dict) -> None:
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = state["rng_state"]
        self._queue = [int(i) for i in state["queue"]]


# ----------------------------------------------------------------------
# synthetic sentiment task


@dataclass(frozen=True)
class SyntheticSpec:
    """Pool sizes for the generated sentiment task."""

    n_pos: int = 3
    n_neg: int = 3
    n_neutral: int = 12
    sentence_len: int = 6

    def __post_init__(self):
        if min(self.n_pos, self.n_neg, self.n_neutral) < 1:
            raise DataError("every word pool needs at least one word")
        if self.sentence_len < 2:
            raise DataError("sentences need room for a polarity word and context")


@dataclass(frozen=True)
class SyntheticTask:
    dataset: ClassificationDataset
    corpus: tuple
    vocab: Vocabulary
    pools: dict[str, tuple[int, ...]]


def gen_synthetic_sentiment(spec: SyntheticSpec, n_examples: int, seed: int) -> SyntheticTask:
    """Generate sentences of neutral words plus exactly one polarity word.

    The label is the polarity word's class, so a perfect classifier
    exists. The returned corpus holds cloze items (sentence plus a
    trailing mask whose gold is the sentence's polarity word) for
    training a toy model whose mask distribution then separates the
    classes.
    """
    mask = "[MASK]"
    pos_words = [f"pos{i}" for i in range(spec.n_pos)]
    neg_words = [f"neg{i}" for i in range(spec.n_neg)]
    neutral_words = [f"w{i}" for i in range(spec.n_neutral)]
    vocab = Vocabulary(
        strings=(mask, *pos_words, *neg_words, *neutral_words),
        mask_id=0,
        special_ids=frozenset({0}),
    )
    pools = {
        "pos": tuple(vocab.id_of(w) for w in pos_words),
        "neg": tuple(vocab.id_of(w) for w in neg_words),
    }
    neutral_ids = tuple(vocab.id_of(w) for w in neutral_words)

    rng = np.random.default_rng(seed)
    examples = []
    corpus = []
    for i in range(n_examples):
        label = "pos" if i % 2 == 0 else "neg"
        polarity = int(pools[label][int(rng.integers(len(pools[label])))])
        words = [
            int(neutral_ids[j])
            for j in rng.integers(len(neutral_ids), size=spec.sentence_len - 1)
        ]
        slot = int(rng.integers(spec.sentence_len))
        words.insert(slot, polarity)
        examples.append(({"sent": vocab.decode(words)}, label))
        corpus.append((tuple(words) + (vocab.mask_id,), spec.sentence_len, polarity))

    dataset = ClassificationDataset(tuple(examples), ("neg", "pos"), "synthetic-sentiment")
    return SyntheticTask(dataset=dataset, corpus=tuple(corpus), vocab=vocab, pools=pools)
