"""Vocabulary, embedding matrices, and trigger-token filtering.

The vocabulary is the shared currency of the whole package: templates render
to token ids, oracles answer distributions over ids, and the search swaps
ids in and out of trigger slots. A content fingerprint of the id-to-surface
map lets a client verify it holds the same vocabulary as a remote server.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Vocabulary:
    """Dense token-id space of an oracle.

    ``strings[i]`` is the surface form of id ``i``. ``special_ids`` holds
    mask, padding, and delimiter ids; ``mask_id`` is the one filled in by
    the oracle and must be a member of ``special_ids``.
    """

    strings: tuple[str, ...]
    mask_id: int
    special_ids: frozenset[int]
    _index: dict[str, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        index = {s: i for i, s in enumerate(self.strings)}
        if len(index) != len(self.strings):
            raise ConfigError("vocabulary surfaces must be unique")
        if not (0 <= self.mask_id < len(self.strings)):
            raise ConfigError(f"mask id {self.mask_id} out of range")
        if self.mask_id not in self.special_ids:
            raise ConfigError("mask id must be listed among special ids")
        for sid in self.special_ids:
            if not (0 <= sid < len(self.strings)):
                raise ConfigError(f"special id {sid} out of range")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.strings)

    def id_of(self, surface: str) -> int:
        try:
            return self._index[surface]
        except KeyError:
            raise ConfigError(f"token {surface!r} not in vocabulary") from None

    def string_of(self, token_id: int) -> str:
        if not (0 <= token_id < self.size):
            raise ConfigError(f"token id {token_id} out of range")
        return self.strings[token_id]

    def __contains__(self, surface: str) -> bool:
        return surface in self._index

    def encode(self, text: str) -> list[int]:
        """Whitespace-split ``text`` and look up each piece."""
        return [self.id_of(piece) for piece in text.split()]

    def decode(self, token_ids) -> str:
        return " ".join(self.string_of(int(t)) for t in token_ids)

    def fingerprint(self) -> str:
        """SHA-256 of the id-to-surface map, stable across processes."""
        h = hashlib.sha256()
        h.update(str(self.size).encode())
        for s in self.strings:
            h.update(b"\x00")
            h.update(s.encode("utf-8"))
        h.update(b"\x01" + str(self.mask_id).encode())
        h.update(b"\x02" + ",".join(map(str, sorted(self.special_ids))).encode())
        return h.hexdigest()

    def to_file(self, path) -> None:
        payload = {
            "strings": list(self.strings),
            "mask_id": self.mask_id,
            "special_ids": sorted(self.special_ids),
        }
        Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            strings=tuple(payload["strings"]),
            mask_id=int(payload["mask_id"]),
            special_ids=frozenset(int(i) for i in payload["special_ids"]),
        )


@dataclass(frozen=True)
class EmbeddingView:
    """Input and output embedding matrices of an oracle, one row per token."""

    input_embeddings: np.ndarray
    output_embeddings: np.ndarray

    def __post_init__(self):
        inp, out = self.input_embeddings, self.output_embeddings
        if inp.ndim != 2 or out.ndim != 2:
            raise ConfigError("embedding matrices must be 2-d")
        if inp.shape != out.shape:
            raise ConfigError(
                f"embedding shape mismatch: {inp.shape} vs {out.shape}"
            )
        if not (np.isfinite(inp).all() and np.isfinite(out).all()):
            raise ConfigError("embedding matrices contain non-finite entries")

    @property
    def size(self) -> int:
        return self.input_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.input_embeddings.shape[1]


@dataclass(frozen=True)
class TokenFilter:
    """Decides which vocabulary tokens may become trigger tokens.

    The decision is a pure function of the token id, its surface string,
    and the filter's own fields, so filters can be shared freely across
    concurrent search workers.
    """

    blocked_ids: frozenset[int] = frozenset()
    block_capitalized: bool = False
    block_specials: bool = True

    def blocked(self, token_id: int, vocab: Vocabulary) -> bool:
        if token_id in self.blocked_ids:
            return True
        if self.block_specials and token_id in vocab.special_ids:
            return True
        if self.block_capitalized:
            surface = vocab.strings[token_id]
            if surface and surface[0].isupper():
                return True
        return False

    def blocked_mask(self, vocab: Vocabulary) -> np.ndarray:
        """Boolean mask over the whole vocabulary, True where blocked."""
        mask = np.zeros(vocab.size, dtype=bool)
        for tid in self.blocked_ids:
            if 0 <= tid < vocab.size:
                mask[tid] = True
        if self.block_specials:
            for tid in vocab.special_ids:
                mask[tid] = True
        if self.block_capitalized:
            for tid, surface in enumerate(vocab.strings):
                if surface and surface[0].isupper():
                    mask[tid] = True
        return mask

    def allowed_count(self, vocab: Vocabulary) -> int:
        return int((~self.blocked_mask(vocab)).sum())


def build_token_filter(
    vocab: Vocabulary,
    gold_objects=(),
    *,
    block_capitalized: bool = False,
    block_specials: bool = True,
) -> TokenFilter:
    """Build a trigger filter that blocks known answers and optional classes.

    ``gold_objects`` are token ids that appear as gold answers in training
    data; blocking them keeps the search from smuggling answers into the
    prompt itself.
    """
    gold = frozenset(int(g) for g in gold_objects)
    for g in gold:
        if not (0 <= g < vocab.size):
            raise ConfigError(f"gold object id {g} out of vocabulary range")
    return TokenFilter(
        blocked_ids=gold,
        block_capitalized=block_capitalized,
        block_specials=block_specials,
    )
