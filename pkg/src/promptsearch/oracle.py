"""Masked-LM oracles: the query contract and an analytic toy model.

An oracle answers three questions about a prompt containing one mask:

* the log distribution over vocabulary tokens at the mask position,
* gradients of the label-set log likelihood ``log sum_{w in labels} p(w)``
  with respect to the input embedding at requested trigger positions,
* optionally the hidden state that produced the mask logits.

:class:`ToyMlm` is a closed-form mean-pooling model small enough to verify
with finite differences and exhaustive search; real pretrained models are
reached through :class:`promptsearch.remote.RemoteOracle` instead.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, OracleError
from .templates import PromptInstance
from .vocab import EmbeddingView, Vocabulary

IDENTITY = "identity"
TANH = "tanh"


@dataclass(frozen=True)
class OracleRequest:
    """One prompt plus what to compute for it.

    ``grad_positions`` must be a subset of the prompt's trigger positions,
    and requesting gradients requires ``label_token_ids`` to define the
    likelihood being differentiated.
    """

    prompt: PromptInstance
    label_token_ids: tuple[int, ...] | None = None
    grad_positions: tuple[int, ...] = ()
    want_hidden: bool = False

    def __post_init__(self):
        object.__setattr__(self, "grad_positions", tuple(int(p) for p in self.grad_positions))
        if self.label_token_ids is not None:
            object.__setattr__(
                self, "label_token_ids", tuple(int(t) for t in self.label_token_ids)
            )
        trig = set(self.prompt.trigger_positions)
        for p in self.grad_positions:
            if p not in trig:
                raise ConfigError(f"gradient position {p} is not a trigger position")
        if self.grad_positions and not self.label_token_ids:
            raise ConfigError("gradient request needs label token ids")


@dataclass
class OracleResponse:
    """Mask distribution, per-position gradients, and optional hidden state."""

    mask_log_probs: np.ndarray
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    mask_hidden: np.ndarray | None = None

    def validate(self, request: OracleRequest, vocab_size: int) -> "OracleResponse":
        if self.mask_log_probs.shape != (vocab_size,):
            raise OracleError(
                f"mask distribution has shape {self.mask_log_probs.shape}, expected ({vocab_size},)"
            )
        total = float(np.exp(self.mask_log_probs).sum())
        if not np.isfinite(total) or abs(total - 1.0) > 1e-6:
            raise OracleError(f"mask distribution sums to {total}, not 1")
        if set(self.grads) != set(request.grad_positions):
            raise OracleError(
                f"gradients returned for positions {sorted(self.grads)}, "
                f"requested {sorted(request.grad_positions)}"
            )
        for pos, g in self.grads.items():
            if not np.isfinite(g).all():
                raise OracleError(f"non-finite gradient at position {pos}")
        if request.want_hidden and self.mask_hidden is None:
            raise OracleError("hidden state requested but not returned")
        return self


class MlmOracle(abc.ABC):
    """Interface every oracle backend implements."""

    @property
    @abc.abstractmethod
    def vocab(self) -> Vocabulary: ...

    @abc.abstractmethod
    def query(self, request: OracleRequest) -> OracleResponse: ...

    @abc.abstractmethod
    def embedding_view(self) -> EmbeddingView: ...


def label_log_likelihood(mask_log_probs: np.ndarray, label_token_ids) -> float:
    """``log sum_{w in labels} p(mask = w)``, computed in log space."""
    ids = np.asarray(label_token_ids, dtype=int)
    return float(np.logaddexp.reduce(mask_log_probs[ids]))


class ToyMlm(MlmOracle):
    """Mean-pooling masked LM with closed-form gradients.

    The hidden state is ``h = f(U c + b)`` where ``c`` is the mean input
    embedding of the context (every position whose token is not special),
    and mask logits are ``E_out h``. Because pooling is a mean, the
    gradient of any loss with respect to the embedding at one pooled
    position is ``(1/n) U^T (f'(z) * dL/dh)``; positions holding special
    tokens sit outside the pool and get a zero gradient.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        embeddings: EmbeddingView,
        context_map: np.ndarray,
        bias: np.ndarray,
        nonlinearity: str = TANH,
    ):
        if embeddings.size != vocab.size:
            raise ConfigError("embedding rows must match vocabulary size")
        dim = embeddings.dim
        if context_map.shape != (dim, dim) or bias.shape != (dim,):
            raise ConfigError("context map / bias shape mismatch")
        if nonlinearity not in (IDENTITY, TANH):
            raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")
        self._vocab = vocab
        self._embeddings = embeddings
        self.context_map = np.asarray(context_map, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.nonlinearity = nonlinearity

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def dim(self) -> int:
        return self._embeddings.dim

    def embedding_view(self) -> EmbeddingView:
        return self._embeddings

    def _pooled(self, token_ids):
        specials = self._vocab.special_ids
        return [i for i, t in enumerate(token_ids) if t not in specials]

    def _forward(self, token_ids):
        for t in token_ids:
            if not (0 <= t < self._vocab.size):
                raise OracleError(f"token id {t} out of range")
        pooled = self._pooled(token_ids)
        E_in = self._embeddings.input_embeddings
        if pooled:
            c = E_in[[token_ids[i] for i in pooled]].mean(axis=0)
        else:
            c = np.zeros(self.dim)
        z = self.context_map @ c + self.bias
        h = np.tanh(z) if self.nonlinearity == TANH else z
        logits = self._embeddings.output_embeddings @ h
        log_probs = logits - np.logaddexp.reduce(logits)
        return pooled, h, log_probs

    def query(self, request: OracleRequest) -> OracleResponse:
        prompt = request.prompt
        if prompt.token_ids[prompt.mask_position] != self._vocab.mask_id:
            raise OracleError("prompt mask position does not hold the mask token")
        pooled, h, log_probs = self._forward(prompt.token_ids)

        grads: dict[int, np.ndarray] = {}
        if request.grad_positions:
            p = np.exp(log_probs)
            label_ids = np.asarray(request.label_token_ids, dtype=int)
            q = np.zeros_like(p)
            label_mass = p[label_ids].sum()
            q[label_ids] = p[label_ids] / label_mass
            dh = self._embeddings.output_embeddings.T @ (q - p)
            if self.nonlinearity == TANH:
                dz = (1.0 - h * h) * dh
            else:
                dz = dh
            dc = self.context_map.T @ dz
            pooled_set = set(pooled)
            n = len(pooled)
            for pos in request.grad_positions:
                if pos in pooled_set:
                    grads[pos] = dc / n
                else:
                    grads[pos] = np.zeros(self.dim)

        response = OracleResponse(
            mask_log_probs=log_probs,
            grads=grads,
            mask_hidden=h.copy() if request.want_hidden else None,
        )
        return response.validate(request, self._vocab.size)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        meta = {
            "nonlinearity": self.nonlinearity,
            "vocab": {
                "strings": list(self._vocab.strings),
                "mask_id": self._vocab.mask_id,
                "special_ids": sorted(self._vocab.special_ids),
            },
        }
        np.savez(
            path,
            input_embeddings=self._embeddings.input_embeddings,
            output_embeddings=self._embeddings.output_embeddings,
            context_map=self.context_map,
            bias=self.bias,
            meta=np.array(json.dumps(meta)),
        )

    @classmethod
    def load(cls, path) -> "ToyMlm":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            vocab = Vocabulary(
                strings=tuple(meta["vocab"]["strings"]),
                mask_id=int(meta["vocab"]["mask_id"]),
                special_ids=frozenset(int(i) for i in meta["vocab"]["special_ids"]),
            )
            return cls(
                vocab=vocab,
                embeddings=EmbeddingView(
                    input_embeddings=data["input_embeddings"].astype(np.float64),
                    output_embeddings=data["output_embeddings"].astype(np.float64),
                ),
                context_map=data["context_map"],
                bias=data["bias"],
                nonlinearity=meta["nonlinearity"],
            )


def random_toy(
    vocab: Vocabulary,
    dim: int,
    seed: int,
    scale: float = 0.1,
    nonlinearity: str = TANH,
) -> ToyMlm:
    """A toy model with seeded random weights, mostly for tests and demos."""
    rng = np.random.default_rng(seed)
    return ToyMlm(
        vocab=vocab,
        embeddings=EmbeddingView(
            input_embeddings=rng.normal(0.0, scale, (vocab.size, dim)),
            output_embeddings=rng.normal(0.0, scale, (vocab.size, dim)),
        ),
        context_map=rng.normal(0.0, scale / np.sqrt(dim), (dim, dim)) + np.eye(dim),
        bias=np.zeros(dim),
        nonlinearity=nonlinearity,
    )


def _cloze_loss_and_grads(model: ToyMlm, token_ids, mask_position, gold_id):
    """Cross-entropy of the gold token at the mask, plus parameter gradients."""
    E_in = model._embeddings.input_embeddings
    E_out = model._embeddings.output_embeddings
    pooled = model._pooled(token_ids)
    n = len(pooled)
    c = E_in[[token_ids[i] for i in pooled]].mean(axis=0) if n else np.zeros(model.dim)
    z = model.context_map @ c + model.bias
    h = np.tanh(z) if model.nonlinearity == TANH else z
    logits = E_out @ h
    log_probs = logits - np.logaddexp.reduce(logits)
    loss = -log_probs[gold_id]

    dlogits = np.exp(log_probs)
    dlogits[gold_id] -= 1.0
    dE_out = np.outer(dlogits, h)
    dh = E_out.T @ dlogits
    dz = (1.0 - h * h) * dh if model.nonlinearity == TANH else dh
    dU = np.outer(dz, c)
    db = dz
    dc = model.context_map.T @ dz
    dE_in = np.zeros_like(E_in)
    if n:
        for i in pooled:
            dE_in[token_ids[i]] += dc / n
    return loss, dE_in, dE_out, dU, db


def toy_cross_entropy(model: ToyMlm, corpus) -> float:
    """Average masked-token cross-entropy of ``model`` on ``corpus``."""
    total = 0.0
    for token_ids, mask_position, gold_id in corpus:
        loss, *_ = _cloze_loss_and_grads(model, list(token_ids), mask_position, gold_id)
        total += loss
    return total / len(corpus)


def train_toy(
    corpus,
    vocab: Vocabulary,
    dim: int,
    steps: int,
    learning_rate: float,
    seed: int,
    nonlinearity: str = TANH,
    init_scale: float = 0.1,
) -> ToyMlm:
    """Fit a :class:`ToyMlm` on cloze items by full-batch gradient descent.

    Each corpus item is ``(token_ids, mask_position, gold_id)`` with the
    mask token at ``mask_position``. Training is deterministic given the
    seed; a non-finite loss aborts with the offending step number.
    """
    if not corpus:
        raise DataError("training corpus is empty")
    corpus = [(list(map(int, ids)), int(mp), int(g)) for ids, mp, g in corpus]
    for ids, mp, g in corpus:
        if not (0 <= g < vocab.size):
            raise DataError(f"gold id {g} out of range")
        if ids[mp] != vocab.mask_id:
            raise DataError("corpus item mask position does not hold the mask token")

    rng = np.random.default_rng(seed)
    model = ToyMlm(
        vocab=vocab,
        embeddings=EmbeddingView(
            input_embeddings=rng.normal(0.0, init_scale, (vocab.size, dim)),
            output_embeddings=rng.normal(0.0, init_scale, (vocab.size, dim)),
        ),
        context_map=np.eye(dim),
        bias=np.zeros(dim),
        nonlinearity=nonlinearity,
    )

    m = len(corpus)
    for step in range(steps):
        gE_in = np.zeros_like(model._embeddings.input_embeddings)
        gE_out = np.zeros_like(model._embeddings.output_embeddings)
        gU = np.zeros_like(model.context_map)
        gb = np.zeros_like(model.bias)
        total = 0.0
        # Overflow here is the divergence signal, not an anomaly to warn about.
        with np.errstate(over="ignore", invalid="ignore"):
            for ids, mp, gold in corpus:
                loss, dE_in, dE_out, dU, db = _cloze_loss_and_grads(model, ids, mp, gold)
                total += loss
                gE_in += dE_in
                gE_out += dE_out
                gU += dU
                gb += db
        if not np.isfinite(total):
            raise OracleError(f"training diverged at step {step}: loss {total}")
        lr = learning_rate / m
        model = ToyMlm(
            vocab=vocab,
            embeddings=EmbeddingView(
                input_embeddings=model._embeddings.input_embeddings - lr * gE_in,
                output_embeddings=model._embeddings.output_embeddings - lr * gE_out,
            ),
            context_map=model.context_map - lr * gU,
            bias=model.bias - lr * gb,
            nonlinearity=nonlinearity,
        )
    return model
