"""Framed-JSON wire format spoken by prompt-search clients.

One frame is a 4-byte big-endian unsigned length followed by that many
bytes of UTF-8 JSON, serialized with sorted keys and no whitespace. The
server sends a ``hello`` on connect, then answers ``query`` and
``embeddings`` requests one at a time; recoverable failures become
``error`` frames on the same connection.

This module is an independent implementation of the published frame
format, so the server package stands alone; interoperability with the
client side is covered by the test suite.
"""

from __future__ import annotations

import json
import struct

MAX_FRAME_BYTES = 64 * 1024 * 1024

ERR_BAD_REQUEST = "bad_request"
ERR_INTERNAL = "internal"
ERR_OOM = "oom"


class WireError(Exception):
    """A frame violated the format (bad length, bad JSON, missing type)."""


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise WireError(f"frame of {len(payload)} bytes exceeds limit")
    return struct.pack(">I", len(payload)) + payload


def _recv_exact(sock, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise WireError(f"announced frame of {length} bytes exceeds limit")
    payload = _recv_exact(sock, length)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise WireError("frame is not an object with a 'type' field")
    return message


def write_frame(sock, message: dict) -> None:
    sock.sendall(encode_frame(message))


def hello_message(fingerprint: str, vocab_size: int, hidden_dim: int) -> dict:
    return {
        "type": "hello",
        "vocab_fingerprint": fingerprint,
        "vocab_size": int(vocab_size),
        "hidden_dim": int(hidden_dim),
    }


def response_message(mask_log_probs, grads=None, mask_hidden=None) -> dict:
    message = {
        "type": "response",
        "mask_log_probs": [float(x) for x in mask_log_probs],
    }
    if grads:
        message["grads"] = {
            str(pos): [float(x) for x in vec] for pos, vec in grads.items()
        }
    if mask_hidden is not None:
        message["mask_hidden"] = [float(x) for x in mask_hidden]
    return message


def embeddings_message(kind: str, rows, ids=None) -> dict:
    message = {
        "type": "embeddings",
        "kind": kind,
        "rows": [[float(x) for x in row] for row in rows],
    }
    if ids is not None:
        message["ids"] = [int(i) for i in ids]
    return message


def error_message(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}
