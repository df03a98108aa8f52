"""Serve a pretrained masked LM to prompt-search clients over TCP.

The package wraps an ``AutoModelForMaskedLM`` checkpoint behind the
framed-JSON oracle protocol: mask distributions, input-embedding
gradients of the label marginal, mask hidden states, and embedding rows.
"""

from .backend import BadRequest, MaskedLmBackend, QueryResult, vocab_fingerprint
from .server import ModelServer

__all__ = [
    "BadRequest",
    "MaskedLmBackend",
    "ModelServer",
    "QueryResult",
    "vocab_fingerprint",
]
