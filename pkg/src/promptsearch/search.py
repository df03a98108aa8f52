"""Gradient-guided trigger search.

Each step replaces one trigger slot. Candidates for the slot are the
tokens whose input embeddings have the largest dot product with the
batch-averaged gradient of the label log likelihood at that slot; the
winner among candidates (and, by default, the current token) is whichever
gives the highest mean label log likelihood on a fresh evaluation batch.
After every iteration the dev set is scored, and the best trigger
sequence seen anywhere in the run is what the search returns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import classification_metrics
from .labels import LabelTokenSet, top_k_ids
from .oracle import MlmOracle, OracleRequest, label_log_likelihood
from .templates import Template, render_prompt
from .vocab import EmbeddingView, TokenFilter, Vocabulary

ROUND_ROBIN = "round-robin"
RANDOM_ORDER = "random"


@dataclass(frozen=True)
class SearchConfig:
    candidate_k: int = 10
    trigger_len: int = 3
    iterations: int = 50
    candidate_batch: int = 16
    eval_batch: int = 16
    seed: int = 0
    token_filter: TokenFilter = field(default_factory=TokenFilter)
    include_incumbent: bool = True
    position_order: str = ROUND_ROBIN
    max_length: int | None = None

    def __post_init__(self):
        if self.candidate_k < 1:
            raise ConfigError("candidate_k must be at least 1")
        if self.trigger_len < 1:
            raise ConfigError("trigger_len must be at least 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.candidate_batch < 1 or self.eval_batch < 1:
            raise ConfigError("batch sizes must be at least 1")
        if self.position_order not in (ROUND_ROBIN, RANDOM_ORDER):
            raise ConfigError(f"unknown position order {self.position_order!r}")

    def to_dict(self) -> dict:
        return {
            "candidate_k": self.candidate_k,
            "trigger_len": self.trigger_len,
            "iterations": self.iterations,
            "candidate_batch": self.candidate_batch,
            "eval_batch": self.eval_batch,
            "seed": self.seed,
            "token_filter": {
                "blocked_ids": sorted(self.token_filter.blocked_ids),
                "block_capitalized": self.token_filter.block_capitalized,
                "block_specials": self.token_filter.block_specials,
            },
            "include_incumbent": self.include_incumbent,
            "position_order": self.position_order,
            "max_length": self.max_length,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchConfig":
        doc = dict(doc)
        tf = doc.pop("token_filter", {})
        return cls(
            token_filter=TokenFilter(
                blocked_ids=frozenset(int(i) for i in tf.get("blocked_ids", ())),
                block_capitalized=bool(tf.get("block_capitalized", False)),
                block_specials=bool(tf.get("block_specials", True)),
            ),
            **doc,
        )


@dataclass
class IterationRecord:
    """One row of search history; ``iteration`` 0 is the initialization."""

    iteration: int
    dev_log_likelihood: float
    dev_accuracy: float
    position: int | None = None
    accepted_token: int | None = None
    eval_metric: float | None = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "dev_log_likelihood": self.dev_log_likelihood,
            "dev_accuracy": self.dev_accuracy,
            "position": self.position,
            "accepted_token": self.accepted_token,
            "eval_metric": self.eval_metric,
        }


@dataclass
class SearchResult:
    best_triggers: tuple[int, ...]
    best_dev_metric: float
    best_dev_accuracy: float
    final_triggers: tuple[int, ...]
    history: list[IterationRecord]


@dataclass(frozen=True)
class CandidateSet:
    """Top-scoring replacement tokens for one trigger slot, best first."""

    position: int
    token_ids: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.token_ids) != len(self.scores):
            raise ConfigError("one score per candidate required")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ConfigError("candidate scores must be non-increasing")


# ----------------------------------------------------------------------
# one-step primitives


def candidate_set(
    oracle: MlmOracle,
    batch,
    labels: LabelTokenSet,
    position: int,
    embeddings: EmbeddingView,
    config: SearchConfig,
) -> CandidateSet:
    """Rank replacement tokens for trigger slot ``position`` on ``batch``.

    ``batch`` is a list of (PromptInstance, class label) pairs that all
    share the current triggers. The score of token w is the dot product
    of w's input embedding with the batch-averaged gradient of the label
    log likelihood at the slot.
    """
    if not batch:
        raise DataError("candidate batch is empty")
    grad_sum = None
    for prompt, label in batch:
        if position >= len(prompt.trigger_positions):
            raise ConfigError(f"trigger slot {position} out of range")
        pos = prompt.trigger_positions[position]
        response = oracle.query(
            OracleRequest(
                prompt=prompt,
                label_token_ids=labels.ids_for(label),
                grad_positions=(pos,),
            )
        )
        g = response.grads[pos]
        grad_sum = g if grad_sum is None else grad_sum + g
    grad_mean = grad_sum / len(batch)

    scores = embeddings.input_embeddings @ grad_mean
    blocked = config.token_filter.blocked_mask(oracle.vocab)
    k = min(config.candidate_k, int((~blocked).sum()))
    ids = top_k_ids(scores, k, blocked)
    return CandidateSet(
        position=position,
        token_ids=ids,
        scores=tuple(float(scores[i]) for i in ids),
    )


def _mean_label_ll(oracle: MlmOracle, prompts_and_ids) -> float:
    total = 0.0
    for prompt, label_ids in prompts_and_ids:
        response = oracle.query(OracleRequest(prompt=prompt, label_token_ids=label_ids))
        total += label_log_likelihood(response.mask_log_probs, label_ids)
    return total / len(prompts_and_ids)


def evaluate_candidates(
    oracle: MlmOracle,
    eval_batch,
    labels: LabelTokenSet,
    position: int,
    candidates: CandidateSet,
    incumbent: int,
    config: SearchConfig,
) -> tuple[int, float]:
    """Pick the candidate with the best mean label log likelihood.

    Ties prefer the incumbent, then the lower token id, so re-running a
    step can never silently change the outcome.
    """
    if not eval_batch:
        raise DataError("evaluation batch is empty")
    contenders = list(candidates.token_ids)
    if config.include_incumbent and incumbent not in contenders:
        contenders.append(int(incumbent))

    label_ids_per_prompt = [labels.ids_for(label) for _, label in eval_batch]
    best_token = None
    best_metric = -np.inf
    for token in contenders:
        swapped = [
            (prompt.with_trigger(position, token), ids)
            for (prompt, _), ids in zip(eval_batch, label_ids_per_prompt)
        ]
        metric = _mean_label_ll(oracle, swapped)
        if best_token is None:
            best_token, best_metric = token, metric
            continue
        if metric > best_metric:
            best_token, best_metric = token, metric
        elif metric == best_metric:
            token_is_incumbent = token == incumbent
            best_is_incumbent = best_token == incumbent
            if (token_is_incumbent and not best_is_incumbent) or (
                token_is_incumbent == best_is_incumbent and token < best_token
            ):
                best_token, best_metric = token, metric
    return int(best_token), float(best_metric)


# ----------------------------------------------------------------------
# full search loop


def dev_scores(
    oracle: MlmOracle,
    template: Template,
    triggers,
    dev_set,
    labels: LabelTokenSet,
    max_length: int | None = None,
) -> tuple[float, float]:
    """(mean label log likelihood, accuracy) of ``triggers`` on ``dev_set``."""
    if not dev_set:
        raise DataError("dev set is empty")
    prompts = [
        (render_prompt(template, inputs, triggers, oracle.vocab, max_length), label)
        for inputs, label in dev_set
    ]
    ll = _mean_label_ll(
        oracle, [(prompt, labels.ids_for(label)) for prompt, label in prompts]
    )
    metrics = classification_metrics(oracle, prompts, labels)
    return ll, metrics.accuracy


def run_search(
    oracle: MlmOracle,
    train_stream,
    dev_set,
    labels: LabelTokenSet,
    template: Template,
    config: SearchConfig,
    warm_start=None,
    checkpoint_path=None,
    resume: dict | None = None,
) -> SearchResult:
    """Search trigger tokens; see the module docstring for the loop shape.

    Triggers start as mask tokens unless ``warm_start`` supplies ids.
    ``resume`` takes a checkpoint document and continues from its state.
    The checkpoint file is rewritten only at iteration boundaries, so
    after a mid-iteration oracle failure it still holds the end state of
    the last completed iteration and the run resumes cleanly.
    """
    if template.trigger_count != config.trigger_len:
        raise ConfigError(
            f"template has {template.trigger_count} trigger slots, "
            f"config expects {config.trigger_len}"
        )
    vocab = oracle.vocab
    embeddings = oracle.embedding_view()

    if resume is not None:
        if resume["config"] != config.to_dict():
            raise ConfigError("checkpoint config does not match current config")
        state = resume["state"]
        triggers = [int(t) for t in state["triggers"]]
        best_triggers = tuple(int(t) for t in state["best_triggers"])
        best_ll = float(state["best_dev_metric"])
        best_acc = float(state["best_dev_accuracy"])
        start_iteration = int(state["iteration"]) + 1
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng_state"]
        train_stream.restore(state["stream_state"])
        history = [IterationRecord(**row) for row in resume["history"]]
    else:
        if warm_start is not None:
            triggers = [int(t) for t in warm_start]
            if len(triggers) != config.trigger_len:
                raise ConfigError("warm start length does not match trigger_len")
        else:
            triggers = [vocab.mask_id] * config.trigger_len
        rng = np.random.default_rng(config.seed)
        ll, acc = dev_scores(oracle, template, triggers, dev_set, labels, config.max_length)
        best_triggers, best_ll, best_acc = tuple(triggers), ll, acc
        start_iteration = 1
        history = [IterationRecord(iteration=0, dev_log_likelihood=ll, dev_accuracy=acc)]

    def checkpoint(iteration: int) -> None:
        if checkpoint_path is None:
            return
        save_checkpoint(
            checkpoint_path,
            config=config,
            triggers=triggers,
            best_triggers=best_triggers,
            best_dev_metric=best_ll,
            best_dev_accuracy=best_acc,
            iteration=iteration,
            rng_state=rng.bit_generator.state,
            stream_state=train_stream.state_dict(),
            history=history,
        )

    checkpoint(start_iteration - 1)
    # On oracle failure mid-iteration the file still holds the end state of
    # the last completed iteration, so the run resumes cleanly; rewriting it
    # here would capture half-consumed stream and rng state.
    for iteration in range(start_iteration, config.iterations + 1):
        if config.position_order == ROUND_ROBIN:
            position = (iteration - 1) % config.trigger_len
        else:
            position = int(rng.integers(config.trigger_len))

        cand_examples = train_stream.next_batch(config.candidate_batch)
        cand_prompts = [
            (render_prompt(template, inputs, triggers, vocab, config.max_length), label)
            for inputs, label in cand_examples
        ]
        candidates = candidate_set(
            oracle, cand_prompts, labels, position, embeddings, config
        )

        eval_examples = train_stream.next_batch(config.eval_batch)
        eval_prompts = [
            (render_prompt(template, inputs, triggers, vocab, config.max_length), label)
            for inputs, label in eval_examples
        ]
        winner, winner_metric = evaluate_candidates(
            oracle, eval_prompts, labels, position, candidates, triggers[position], config
        )
        triggers[position] = winner

        ll, acc = dev_scores(oracle, template, triggers, dev_set, labels, config.max_length)
        history.append(
            IterationRecord(
                iteration=iteration,
                dev_log_likelihood=ll,
                dev_accuracy=acc,
                position=position,
                accepted_token=winner,
                eval_metric=winner_metric,
            )
        )
        if ll > best_ll:
            best_triggers, best_ll, best_acc = tuple(triggers), ll, acc
        checkpoint(iteration)

    return SearchResult(
        best_triggers=best_triggers,
        best_dev_metric=best_ll,
        best_dev_accuracy=best_acc,
        final_triggers=tuple(triggers),
        history=history,
    )


# ----------------------------------------------------------------------
# checkpointing and artifacts


def save_checkpoint(
    path,
    config: SearchConfig,
    triggers,
    best_triggers,
    best_dev_metric: float,
    best_dev_accuracy: float,
    iteration: int,
    rng_state: dict,
    stream_state: dict,
    history,
) -> None:
    doc = {
        "config": config.to_dict(),
        "state": {
            "triggers": [int(t) for t in triggers],
            "best_triggers": [int(t) for t in best_triggers],
            "best_dev_metric": float(best_dev_metric),
            "best_dev_accuracy": float(best_dev_accuracy),
            "iteration": int(iteration),
            "rng_state": rng_state,
            "stream_state": stream_state,
        },
        "history": [row.to_dict() for row in history],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc


def write_prompt_artifact(
    path,
    template: Template,
    triggers,
    labels: LabelTokenSet,
    vocab: Vocabulary,
    dev_metric: float,
    dev_accuracy: float,
    config: SearchConfig,
) -> None:
    """Persist a found prompt with everything needed to apply it later."""
    doc = {
        "template": template.source,
        "triggers": {
            "ids": [int(t) for t in triggers],
            "surfaces": [vocab.string_of(t) for t in triggers],
        },
        "label_sets": {
            "classes": list(labels.classes),
            "sets": {label: list(ids) for label, ids in labels.sets.items()},
            "surfaces": {
                label: [vocab.string_of(t) for t in ids] for label, ids in labels.sets.items()
            },
        },
        "dev_metric": float(dev_metric),
        "dev_accuracy": float(dev_accuracy),
        "config": config.to_dict(),
        "vocab_fingerprint": vocab.fingerprint(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_prompt_artifact(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read prompt artifact {path}: {exc}") from exc
    for key in ("template", "triggers", "label_sets", "vocab_fingerprint"):
        if key not in doc:
            raise DataError(f"prompt artifact {path} is missing {key!r}")
    return doc


def random_trigger_baselines(
    oracle: MlmOracle,
    template: Template,
    dev_set,
    labels: LabelTokenSet,
    config: SearchConfig,
    n_baselines: int,
    seed: int,
) -> list[tuple[float, float]]:
    """Dev scores of ``n_baselines`` uniformly drawn unblocked trigger sequences."""
    vocab = oracle.vocab
    blocked = config.token_filter.blocked_mask(vocab)
    allowed = np.flatnonzero(~blocked)
    if allowed.size == 0:
        raise ConfigError("token filter blocks the whole vocabulary")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_baselines):
        triggers = [int(allowed[i]) for i in rng.integers(allowed.size, size=config.trigger_len)]
        out.append(dev_scores(oracle, template, triggers, dev_set, labels, config.max_length))
    return out
