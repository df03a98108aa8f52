"""TCP server exposing a masked-LM backend over the framed-JSON protocol.

Each connection gets a ``hello`` frame, then a strict request/response
loop. Bad requests and malformed frames produce ``error`` frames and the
connection stays usable; out-of-memory produces an ``error`` frame and
then closes the connection, since the process state after an OOM is not
worth trusting for further answers.

Connections are handled on daemon threads; the backend serializes model
access internally, so concurrent clients interleave at request
granularity.
"""

from __future__ import annotations

import socket
import threading

import torch

from . import wire
from .backend import BadRequest, MaskedLmBackend

OOM_ERRORS = (MemoryError, torch.cuda.OutOfMemoryError)


class ModelServer:
    """Serves one backend; ``port=0`` picks a free port (see ``self.port``)."""

    def __init__(self, backend: MaskedLmBackend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(8)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # ------------------------------------------------------------------

    def _hello(self) -> dict:
        return wire.hello_message(
            fingerprint=self.backend.fingerprint(),
            vocab_size=self.backend.vocab_size,
            hidden_dim=self.backend.hidden_dim,
        )

    def _answer_query(self, message: dict) -> dict:
        try:
            token_ids = [int(t) for t in message["token_ids"]]
            mask_position = int(message["mask_position"])
            grad_positions = [int(p) for p in message.get("grad_positions", ())]
            label_token_ids = [int(t) for t in message.get("label_token_ids") or ()]
            want_hidden = bool(message.get("want_hidden", False))
        except (KeyError, TypeError, ValueError) as exc:
            return wire.error_message(wire.ERR_BAD_REQUEST, f"malformed query: {exc}")
        result = self.backend.query(
            token_ids,
            mask_position,
            grad_positions=grad_positions,
            label_token_ids=label_token_ids,
            want_hidden=want_hidden,
        )
        return wire.response_message(
            mask_log_probs=result.mask_log_probs,
            grads=result.grads,
            mask_hidden=result.mask_hidden,
        )

    def _answer_embeddings(self, message: dict) -> dict:
        kind = message.get("kind")
        ids = message.get("ids")
        if ids is not None:
            try:
                ids = [int(i) for i in ids]
            except (TypeError, ValueError) as exc:
                return wire.error_message(wire.ERR_BAD_REQUEST, f"bad embedding ids: {exc}")
        rows = self.backend.embedding_rows(kind, ids)
        return wire.embeddings_message(kind, rows, ids=ids)

    def _answer(self, message: dict) -> dict:
        kind = message.get("type")
        if kind == "query":
            return self._answer_query(message)
        if kind == "embeddings":
            return self._answer_embeddings(message)
        return wire.error_message(wire.ERR_BAD_REQUEST, f"unknown message type {kind!r}")

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            wire.write_frame(conn, self._hello())
            while not self._stop.is_set():
                try:
                    message = wire.read_frame(conn)
                except (ConnectionError, OSError):
                    return
                except wire.WireError as exc:
                    try:
                        wire.write_frame(
                            conn, wire.error_message(wire.ERR_BAD_REQUEST, str(exc))
                        )
                    except OSError:
                        return
                    continue
                close_after = False
                try:
                    reply = self._answer(message)
                except BadRequest as exc:
                    reply = wire.error_message(wire.ERR_BAD_REQUEST, str(exc))
                except OOM_ERRORS as exc:
                    reply = wire.error_message(wire.ERR_OOM, f"out of memory: {exc}")
                    close_after = True
                except Exception as exc:  # keep serving after unexpected failures
                    reply = wire.error_message(wire.ERR_INTERNAL, str(exc))
                try:
                    wire.write_frame(conn, reply)
                except OSError:
                    return
                if close_after:
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
                worker = threading.Thread(
                    target=self._serve_connection, args=(conn,), daemon=True
                )
                worker.start()
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

    def __enter__(self) -> "ModelServer":
        self.start_background()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
