"""Reference protocol server that exposes any oracle over a TCP socket.

This is the loopback counterpart of :class:`promptsearch.remote.RemoteOracle`:
it answers ``query`` and ``embeddings`` frames by delegating to a local
:class:`promptsearch.oracle.MlmOracle`. Bad requests get an ``error`` frame
and the connection stays open; transport failures end the connection only.

Clients are served one at a time, which is enough for the search loop's
single-connection usage.
"""

from __future__ import annotations

import socket
import threading

import numpy as np

from . import protocol
from .errors import ConfigError, OracleError, ProtocolError, TransportError
from .oracle import MlmOracle, OracleRequest
from .templates import PromptInstance


def _request_from_message(message: dict) -> OracleRequest:
    try:
        token_ids = tuple(int(t) for t in message["token_ids"])
        mask_position = int(message["mask_position"])
        grad_positions = tuple(int(p) for p in message.get("grad_positions", ()))
        label_ids = message.get("label_token_ids")
        want_hidden = bool(message.get("want_hidden", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed query: {exc}") from exc
    prompt = PromptInstance(
        token_ids=token_ids,
        trigger_positions=grad_positions,
        mask_position=mask_position,
        input_span=frozenset(),
    )
    return OracleRequest(
        prompt=prompt,
        label_token_ids=None if label_ids is None else tuple(int(t) for t in label_ids),
        grad_positions=grad_positions,
        want_hidden=want_hidden,
    )


class OracleServer:
    """Serves one oracle; ``port=0`` picks a free port (see ``self.port``)."""

    def __init__(self, oracle: MlmOracle, host: str = "127.0.0.1", port: int = 0):
        self.oracle = oracle
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # ------------------------------------------------------------------

    def _hello(self) -> dict:
        view = self.oracle.embedding_view()
        return protocol.hello_message(
            fingerprint=self.oracle.vocab.fingerprint(),
            vocab_size=self.oracle.vocab.size,
            hidden_dim=view.dim,
        )

    def _answer(self, message: dict) -> dict:
        kind = message.get("type")
        if kind == "query":
            try:
                request = _request_from_message(message)
                response = self.oracle.query(request)
            except (ConfigError, OracleError) as exc:
                return protocol.error_message(protocol.ERR_BAD_REQUEST, str(exc))
            return protocol.response_message(
                mask_log_probs=response.mask_log_probs,
                grads=response.grads,
                mask_hidden=response.mask_hidden,
            )
        if kind == "embeddings":
            want = message.get("kind")
            if want not in ("input", "output"):
                return protocol.error_message(
                    protocol.ERR_BAD_REQUEST, f"unknown embedding kind {want!r}"
                )
            view = self.oracle.embedding_view()
            rows = view.input_embeddings if want == "input" else view.output_embeddings
            ids = message.get("ids")
            if ids is not None:
                try:
                    rows = np.asarray(rows)[[int(i) for i in ids]]
                except (IndexError, TypeError, ValueError) as exc:
                    return protocol.error_message(
                        protocol.ERR_BAD_REQUEST, f"bad embedding ids: {exc}"
                    )
                return protocol.embeddings_response(want, rows, ids=ids)
            return protocol.embeddings_response(want, np.asarray(rows))
        return protocol.error_message(protocol.ERR_BAD_REQUEST, f"unknown message type {kind!r}")

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            protocol.write_frame(conn, self._hello())
            while not self._stop.is_set():
                try:
                    message = protocol.read_frame(conn)
                except TransportError:
                    return
                except ProtocolError as exc:
                    try:
                        protocol.write_frame(
                            conn, protocol.error_message(protocol.ERR_BAD_REQUEST, str(exc))
                        )
                    except TransportError:
                        return
                    continue
                try:
                    reply = self._answer(message)
                except Exception as exc:  # keep serving after unexpected failures
                    reply = protocol.error_message(protocol.ERR_INTERNAL, str(exc))
                try:
                    protocol.write_frame(conn, reply)
                except TransportError:
                    return

    def serve_forever(self) -> None:
        self._listener.settimeout(0.2)
        try:
            while not self._stop.is_set():
                try:
                    conn, _addr = self._listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    return
                try:
                    self._serve_connection(conn)
                except TransportError:
                    continue
        finally:
            self._listener.close()

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        try:
            self._listener.close()
        except OSError:
            pass

    def __enter__(self) -> "OracleServer":
        self.start_background()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
