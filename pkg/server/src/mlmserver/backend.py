"""Masked-LM backend: wraps pretrained weights behind the oracle operations.

The backend owns a tokenizer and an ``AutoModelForMaskedLM`` checkpoint and
answers three things about a token-id sequence with one mask position:

* the full-vocabulary log distribution at the mask,
* gradients of ``log sum_{w in labels} p(mask = w)`` with respect to the
  input embedding vectors at requested positions, via backpropagation,
* optionally the final-layer hidden state at the mask.

The model runs in evaluation mode always; deterministic mode additionally
pins torch's algorithm selection so identical queries return identical
bytes. Model access is serialized with a lock, so one backend can sit
behind several concurrent connections.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModelForMaskedLM, AutoTokenizer


class BadRequest(Exception):
    """The query is malformed; the connection can keep going."""


def vocab_fingerprint(strings, mask_id: int, special_ids) -> str:
    """SHA-256 of the id-to-surface map.

    Byte-for-byte the same construction the client applies to its local
    vocabulary file, so the handshake can detect id-space disagreement.
    """
    h = hashlib.sha256()
    h.update(str(len(strings)).encode())
    for s in strings:
        h.update(b"\x00")
        h.update(s.encode("utf-8"))
    h.update(b"\x01" + str(mask_id).encode())
    h.update(b"\x02" + ",".join(map(str, sorted(special_ids))).encode())
    return h.hexdigest()


@dataclass(frozen=True)
class QueryResult:
    mask_log_probs: np.ndarray
    grads: dict
    mask_hidden: np.ndarray | None


class MaskedLmBackend:
    """Loads a checkpoint from ``model_dir`` and serves oracle queries."""

    def __init__(self, model_dir, deterministic: bool = True):
        self.model_dir = str(model_dir)
        self.deterministic = bool(deterministic)
        self.tokenizer = AutoTokenizer.from_pretrained(self.model_dir)
        self.model = AutoModelForMaskedLM.from_pretrained(self.model_dir)
        self.model.eval()
        for parameter in self.model.parameters():
            parameter.requires_grad_(False)
        if self.deterministic:
            torch.use_deterministic_algorithms(True)

        surface_to_id = self.tokenizer.get_vocab()
        id_to_surface = {i: s for s, i in surface_to_id.items()}
        if sorted(id_to_surface) != list(range(len(id_to_surface))):
            raise ValueError("tokenizer ids are not a dense 0..n-1 range")
        self.strings = tuple(id_to_surface[i] for i in range(len(id_to_surface)))
        if len(self.strings) != self.model.config.vocab_size:
            raise ValueError(
                f"tokenizer has {len(self.strings)} tokens but the model head "
                f"has {self.model.config.vocab_size}"
            )
        if self.tokenizer.mask_token_id is None:
            raise ValueError("model has no mask token; cannot serve mask queries")
        self.mask_id = int(self.tokenizer.mask_token_id)
        self.special_ids = frozenset(int(i) for i in self.tokenizer.all_special_ids)
        self._lock = threading.Lock()

    # ------------------------------------------------------------------
    # session facts

    @property
    def vocab_size(self) -> int:
        return len(self.strings)

    @property
    def hidden_dim(self) -> int:
        return int(self.model.config.hidden_size)

    def fingerprint(self) -> str:
        return vocab_fingerprint(self.strings, self.mask_id, self.special_ids)

    def export_vocab(self, path) -> None:
        """Write the id-to-surface map in the client's vocabulary format."""
        payload = {
            "strings": list(self.strings),
            "mask_id": self.mask_id,
            "special_ids": sorted(self.special_ids),
        }
        Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")

    # ------------------------------------------------------------------
    # queries

    def _validate(self, token_ids, mask_position, grad_positions, label_token_ids):
        if not token_ids:
            raise BadRequest("empty token sequence")
        limit = getattr(self.model.config, "max_position_embeddings", None)
        if limit is not None and len(token_ids) > limit:
            raise BadRequest(f"sequence of {len(token_ids)} exceeds model limit {limit}")
        for t in token_ids:
            if not (0 <= t < self.vocab_size):
                raise BadRequest(f"token id {t} out of range")
        if not (0 <= mask_position < len(token_ids)):
            raise BadRequest(f"mask position {mask_position} out of range")
        if len(set(grad_positions)) != len(grad_positions):
            raise BadRequest("duplicate gradient positions")
        for p in grad_positions:
            if not (0 <= p < len(token_ids)):
                raise BadRequest(f"gradient position {p} out of range")
            if p == mask_position:
                raise BadRequest("gradient position collides with the mask")
        if grad_positions:
            if not label_token_ids:
                raise BadRequest("gradients need label token ids")
            for t in label_token_ids:
                if not (0 <= t < self.vocab_size):
                    raise BadRequest(f"label token id {t} out of range")

    def query(
        self,
        token_ids,
        mask_position: int,
        grad_positions=(),
        label_token_ids=(),
        want_hidden: bool = False,
    ) -> QueryResult:
        token_ids = [int(t) for t in token_ids]
        mask_position = int(mask_position)
        grad_positions = [int(p) for p in grad_positions]
        label_token_ids = [int(t) for t in label_token_ids or ()]
        self._validate(token_ids, mask_position, grad_positions, label_token_ids)

        with self._lock:
            ids = torch.tensor([token_ids], dtype=torch.long)
            embeds = self.model.get_input_embeddings()(ids).detach()
            needs_grad = bool(grad_positions)
            embeds.requires_grad_(needs_grad)
            context = torch.enable_grad() if needs_grad else torch.no_grad()
            with context:
                outputs = self.model(
                    inputs_embeds=embeds,
                    attention_mask=torch.ones_like(ids),
                    output_hidden_states=want_hidden,
                )
                # normalize in float64 so sum(exp) == 1 holds to client tolerance
                logits = outputs.logits[0, mask_position].double()
                log_probs = torch.log_softmax(logits, dim=-1)
                grads = {}
                if needs_grad:
                    labels = torch.tensor(label_token_ids, dtype=torch.long)
                    loss = torch.logsumexp(log_probs[labels], dim=0)
                    loss.backward()
                    for pos in grad_positions:
                        grads[pos] = embeds.grad[0, pos].detach().double().numpy()
            hidden = None
            if want_hidden:
                hidden = outputs.hidden_states[-1][0, mask_position].detach().double().numpy()
        return QueryResult(
            mask_log_probs=log_probs.detach().numpy(),
            grads=grads,
            mask_hidden=hidden,
        )

    def embedding_rows(self, kind: str, ids=None) -> np.ndarray:
        if kind == "input":
            weight = self.model.get_input_embeddings().weight
        elif kind == "output":
            head = self.model.get_output_embeddings()
            weight = head.weight if head is not None else self.model.get_input_embeddings().weight
        else:
            raise BadRequest(f"unknown embedding kind {kind!r}")
        with self._lock:
            rows = weight.detach().double().numpy()
        if ids is None:
            return rows
        picked = []
        for i in ids:
            i = int(i)
            if not (0 <= i < self.vocab_size):
                raise BadRequest(f"embedding id {i} out of range")
            picked.append(rows[i])
        return np.asarray(picked)
