"""Client oracle that talks to a model server over the framed-JSON protocol.

The vocabulary travels out of band: the server operator exports it once to
a JSON file, and the client loads that file and checks its fingerprint
against the one announced in the server's ``hello``. A mismatch means the
client and server would disagree about token ids, so it is a hard error.
"""

from __future__ import annotations

import socket

import numpy as np

from . import protocol
from .errors import FingerprintMismatch, OracleError, TransportError
from .oracle import MlmOracle, OracleRequest, OracleResponse
from .vocab import EmbeddingView, Vocabulary


class RemoteOracle(MlmOracle):
    """Speaks the wire protocol; caches embeddings after the first fetch."""

    def __init__(self, host: str, port: int, vocab: Vocabulary, timeout: float = 60.0):
        self._vocab = vocab
        self._sock = None
        self._embeddings: EmbeddingView | None = None
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        hello = protocol.expect(protocol.read_frame(self._sock), "hello")
        fingerprint = hello.get("vocab_fingerprint")
        if fingerprint != vocab.fingerprint():
            self.close()
            raise FingerprintMismatch(
                f"server vocabulary fingerprint {fingerprint} does not match "
                f"local vocabulary {vocab.fingerprint()}"
            )
        if int(hello.get("vocab_size", -1)) != vocab.size:
            self.close()
            raise FingerprintMismatch("server vocabulary size does not match local vocabulary")
        self.hidden_dim = int(hello["hidden_dim"])

    # ------------------------------------------------------------------

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _round_trip(self, message: dict) -> dict:
        if self._sock is None:
            raise TransportError("connection already closed")
        protocol.write_frame(self._sock, message)
        return protocol.read_frame(self._sock)

    # ------------------------------------------------------------------

    def query(self, request: OracleRequest) -> OracleResponse:
        prompt = request.prompt
        message = protocol.query_message(
            token_ids=prompt.token_ids,
            mask_position=prompt.mask_position,
            grad_positions=request.grad_positions,
            label_token_ids=request.label_token_ids,
            want_hidden=request.want_hidden,
        )
        reply = protocol.expect(self._round_trip(message), "response")

        log_probs = np.asarray(reply.get("mask_log_probs", ()), dtype=np.float64)
        grads = {
            int(pos): np.asarray(vec, dtype=np.float64)
            for pos, vec in reply.get("grads", {}).items()
        }
        hidden = reply.get("mask_hidden")
        response = OracleResponse(
            mask_log_probs=log_probs,
            grads=grads,
            mask_hidden=None if hidden is None else np.asarray(hidden, dtype=np.float64),
        )
        return response.validate(request, self._vocab.size)

    def embedding_view(self) -> EmbeddingView:
        if self._embeddings is None:
            rows = {}
            for kind in ("input", "output"):
                reply = protocol.expect(
                    self._round_trip(protocol.embeddings_request(kind)), "embeddings"
                )
                if reply.get("kind") != kind:
                    raise OracleError(f"asked for {kind} embeddings, got {reply.get('kind')!r}")
                rows[kind] = np.asarray(reply["rows"], dtype=np.float64)
                if rows[kind].shape[0] != self._vocab.size:
                    raise OracleError(
                        f"{kind} embedding table has {rows[kind].shape[0]} rows, "
                        f"expected {self._vocab.size}"
                    )
            self._embeddings = EmbeddingView(
                input_embeddings=rows["input"], output_embeddings=rows["output"]
            )
        return self._embeddings
