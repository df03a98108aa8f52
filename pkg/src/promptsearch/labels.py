"""Automatic label-token selection.

Pipeline: render each training example with every trigger slot still
holding the mask token, collect the oracle's mask hidden state, fit a
multinomial logistic classifier from hidden state to class label, then
score every vocabulary token for a class by plugging the token's output
embedding into that class's linear score. The top-k tokens per class
become the label sets that classification marginalizes over.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, OracleError
from .oracle import MlmOracle, OracleRequest
from .templates import PromptInstance, Template, render_prompt
from .vocab import EmbeddingView, TokenFilter, Vocabulary


@dataclass(frozen=True)
class LabelClassifier:
    """Linear class scores ``h . weights[y] + biases[y]`` over hidden states."""

    classes: tuple[str, ...]
    weights: np.ndarray  # (n_classes, dim)
    biases: np.ndarray  # (n_classes,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.classes):
            raise ConfigError("one weight row per class required")
        if self.biases.shape != (len(self.classes),):
            raise ConfigError("one bias per class required")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ConfigError("classifier parameters must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def class_index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ConfigError(f"unknown class label {label!r}") from None

    def predict_log_proba(self, hidden: np.ndarray) -> np.ndarray:
        scores = self.weights @ np.asarray(hidden, dtype=np.float64) + self.biases
        return scores - np.logaddexp.reduce(scores)

    def predict_proba(self, hidden: np.ndarray) -> np.ndarray:
        return np.exp(self.predict_log_proba(hidden))


@dataclass(frozen=True)
class LabelTokenSet:
    """Per-class token-id lists, ordered by descending selection score."""

    classes: tuple[str, ...]
    sets: dict[str, tuple[int, ...]]

    def __post_init__(self):
        if set(self.classes) != set(self.sets):
            raise ConfigError("label sets must cover exactly the listed classes")
        for label, ids in self.sets.items():
            if len(set(ids)) != len(ids):
                raise ConfigError(f"duplicate token ids in label set for {label!r}")

    def ids_for(self, label: str) -> tuple[int, ...]:
        try:
            return self.sets[label]
        except KeyError:
            raise ConfigError(f"unknown class label {label!r}") from None

    def overlapping_classes(self) -> list[tuple[str, str]]:
        pairs = []
        for i, a in enumerate(self.classes):
            for b in self.classes[i + 1 :]:
                if set(self.sets[a]) & set(self.sets[b]):
                    pairs.append((a, b))
        return pairs

    def to_file(self, path, vocab: Vocabulary | None = None) -> None:
        doc = {
            "classes": list(self.classes),
            "sets": {label: list(ids) for label, ids in self.sets.items()},
        }
        if vocab is not None:
            doc["surfaces"] = {
                label: [vocab.string_of(t) for t in ids] for label, ids in self.sets.items()
            }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "LabelTokenSet":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read label sets from {path}: {exc}") from exc
        try:
            return cls(
                classes=tuple(doc["classes"]),
                sets={label: tuple(int(t) for t in ids) for label, ids in doc["sets"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed label set file {path}: {exc}") from exc


# ----------------------------------------------------------------------
# hidden-state collection


def probe_prompts(
    template: Template,
    examples,
    vocab: Vocabulary,
    max_length: int | None = None,
) -> list[tuple[PromptInstance, str]]:
    """Render examples with every trigger slot holding the mask token."""
    triggers = [vocab.mask_id] * template.trigger_count
    prompts = []
    for inputs, label in examples:
        prompts.append((render_prompt(template, inputs, triggers, vocab, max_length), label))
    return prompts


def collect_mask_hiddens(
    oracle: MlmOracle, prompts: list[tuple[PromptInstance, str]]
) -> list[tuple[np.ndarray, str]]:
    """Query the oracle once per prompt, keeping order."""
    out = []
    for index, (prompt, label) in enumerate(prompts):
        try:
            response = oracle.query(OracleRequest(prompt=prompt, want_hidden=True))
        except OracleError as exc:
            raise OracleError(f"hidden-state query failed for prompt {index}: {exc}") from exc
        out.append((np.asarray(response.mask_hidden, dtype=np.float64), label))
    return out


# ----------------------------------------------------------------------
# classifier fitting


def _logistic_loss(weights, biases, hiddens, labels_idx, l2):
    scores = hiddens @ weights.T + biases
    log_norm = np.logaddexp.reduce(scores, axis=1)
    nll = (log_norm - scores[np.arange(len(labels_idx)), labels_idx]).mean()
    return nll + 0.5 * l2 * float((weights * weights).sum())


def _logistic_grads(weights, biases, hiddens, labels_idx, l2):
    scores = hiddens @ weights.T + biases
    scores -= scores.max(axis=1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(labels_idx)), labels_idx] -= 1.0
    probs /= len(labels_idx)
    return probs.T @ hiddens + l2 * weights, probs.sum(axis=0)


def fit_logistic(
    data,
    l2: float = 0.0,
    steps: int = 500,
    learning_rate: float = 0.5,
    seed: int = 0,
    classes: tuple[str, ...] | None = None,
    center: bool = False,
) -> LabelClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    The L2 penalty applies to weights only. Whenever a step would raise
    the regularized loss the step size is halved for that step, so the
    loss is non-increasing across epochs. ``center`` subtracts the mean
    hidden before fitting; the shift is folded back into the biases so
    the returned classifier still scores raw hidden states.
    """
    if not data:
        raise DataError("no training data for the label classifier")
    hiddens = np.asarray([np.asarray(h, dtype=np.float64) for h, _ in data])
    labels = [label for _, label in data]
    if classes is None:
        classes = tuple(sorted(set(labels)))
    else:
        classes = tuple(classes)
        missing = set(classes) - set(labels)
        if missing:
            raise DataError(f"classes with no training examples: {sorted(missing)}")
    index_of = {label: i for i, label in enumerate(classes)}
    try:
        labels_idx = np.asarray([index_of[label] for label in labels])
    except KeyError as exc:
        raise DataError(f"example label {exc} not in class list") from exc
    if len(set(labels_idx)) < len(classes):
        raise DataError("every class needs at least one example")

    offset = hiddens.mean(axis=0) if center else np.zeros(hiddens.shape[1])
    centered = hiddens - offset

    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.01, (len(classes), hiddens.shape[1]))
    biases = np.zeros(len(classes))

    loss = _logistic_loss(weights, biases, centered, labels_idx, l2)
    for step in range(steps):
        grad_w, grad_b = _logistic_grads(weights, biases, centered, labels_idx, l2)
        lr = learning_rate
        # Halve until the regularized loss does not increase.
        for _ in range(60):
            new_w = weights - lr * grad_w
            new_b = biases - lr * grad_b
            new_loss = _logistic_loss(new_w, new_b, centered, labels_idx, l2)
            if np.isfinite(new_loss) and new_loss <= loss:
                break
            lr *= 0.5
        else:
            break  # gradient is effectively zero; converged
        weights, biases, loss = new_w, new_b, new_loss
        if not np.isfinite(loss):
            raise DataError(f"classifier training diverged at step {step}")

    return LabelClassifier(
        classes=classes, weights=weights, biases=biases - weights @ offset
    )


# ----------------------------------------------------------------------
# token scoring and selection


def score_label_tokens(
    classifier: LabelClassifier, embeddings: EmbeddingView, label: str
) -> np.ndarray:
    """Score every vocabulary token for ``label``.

    The score is the class's linear logit with the token's output
    embedding standing in for the hidden state. Exponentiating would not
    change any top-k, so scores stay in logit space.
    """
    if embeddings.dim != classifier.dim:
        raise ConfigError(
            f"embedding dim {embeddings.dim} does not match classifier dim {classifier.dim}"
        )
    idx = classifier.class_index(label)
    return embeddings.output_embeddings @ classifier.weights[idx] + classifier.biases[idx]


def top_k_ids(scores: np.ndarray, k: int, blocked: np.ndarray | None = None) -> tuple[int, ...]:
    """Indices of the k highest scores, ties going to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if blocked is not None:
        allowed = np.flatnonzero(~blocked)
    else:
        allowed = np.arange(scores.shape[0])
    if k < 1 or k > allowed.size:
        raise ConfigError(f"k={k} outside [1, {allowed.size}]")
    # Sort by (-score, id): stable and deterministic.
    order = np.lexsort((allowed, -scores[allowed]))
    return tuple(int(allowed[i]) for i in order[:k])


def select_label_sets(
    classifier: LabelClassifier,
    embeddings: EmbeddingView,
    k: int,
    token_filter: TokenFilter,
    vocab: Vocabulary,
) -> LabelTokenSet:
    blocked = token_filter.blocked_mask(vocab)
    sets = {}
    for label in classifier.classes:
        scores = score_label_tokens(classifier, embeddings, label)
        sets[label] = top_k_ids(scores, k, blocked)
    return LabelTokenSet(classes=classifier.classes, sets=sets)
