"""Framed-JSON wire protocol shared by the remote oracle client and servers.

Every message is one frame: a 4-byte big-endian unsigned length followed by
that many bytes of UTF-8 JSON with sorted keys. The conversation is strictly
request/response after an initial server ``hello``:

* ``hello``  server -> client: vocab fingerprint, size, hidden dimension.
* ``query``  client -> server: token ids, mask position, optional gradient
  positions + label token ids, want_hidden flag.
* ``response`` server -> client: mask log probs, gradients keyed by
  position, optional hidden state.
* ``embeddings`` both ways: client sends the request (kind only), server
  replies with the rows.
* ``error`` server -> client: code + message, connection stays usable.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ProtocolError, TransportError

MAX_FRAME_BYTES = 64 * 1024 * 1024

ERR_BAD_REQUEST = "bad_request"
ERR_VOCAB_MISMATCH = "vocab_mismatch"
ERR_INTERNAL = "internal"


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds limit")
    return struct.pack(">I", len(payload)) + payload


def write_frame(sock, message: dict) -> None:
    try:
        sock.sendall(encode_frame(message))
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def _recv_exact(sock, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"announced frame of {length} bytes exceeds limit")
    payload = _recv_exact(sock, length)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError("frame is not an object with a 'type' field")
    return message


# ----------------------------------------------------------------------
# message constructors


def hello_message(fingerprint: str, vocab_size: int, hidden_dim: int) -> dict:
    return {
        "type": "hello",
        "vocab_fingerprint": fingerprint,
        "vocab_size": int(vocab_size),
        "hidden_dim": int(hidden_dim),
    }


def query_message(
    token_ids,
    mask_position: int,
    grad_positions=(),
    label_token_ids=None,
    want_hidden: bool = False,
) -> dict:
    message = {
        "type": "query",
        "token_ids": [int(t) for t in token_ids],
        "mask_position": int(mask_position),
        "want_hidden": bool(want_hidden),
    }
    if grad_positions:
        message["grad_positions"] = [int(p) for p in grad_positions]
        message["label_token_ids"] = [int(t) for t in label_token_ids]
    return message


def response_message(mask_log_probs, grads=None, mask_hidden=None) -> dict:
    message = {
        "type": "response",
        "mask_log_probs": [float(x) for x in np.asarray(mask_log_probs)],
    }
    if grads:
        message["grads"] = {
            str(pos): [float(x) for x in np.asarray(vec)] for pos, vec in grads.items()
        }
    if mask_hidden is not None:
        message["mask_hidden"] = [float(x) for x in np.asarray(mask_hidden)]
    return message


def embeddings_request(kind: str, ids=None) -> dict:
    """Ask for embedding rows; ``ids`` limits the fetch, None means all."""
    if kind not in ("input", "output"):
        raise ProtocolError(f"unknown embedding kind {kind!r}")
    message = {"type": "embeddings", "kind": kind}
    if ids is not None:
        message["ids"] = [int(i) for i in ids]
    return message


def embeddings_response(kind: str, rows, ids=None) -> dict:
    message = {
        "type": "embeddings",
        "kind": kind,
        "rows": [[float(x) for x in row] for row in np.asarray(rows)],
    }
    if ids is not None:
        message["ids"] = [int(i) for i in ids]
    return message


def error_message(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


def expect(message: dict, expected_type: str) -> dict:
    """Return ``message`` if it has the expected type, raising on errors."""
    kind = message.get("type")
    if kind == "error":
        raise ProtocolError(
            f"server error [{message.get('code', '?')}]: {message.get('message', '')}"
        )
    if kind != expected_type:
        raise ProtocolError(f"expected {expected_type!r} message, got {kind!r}")
    return message
