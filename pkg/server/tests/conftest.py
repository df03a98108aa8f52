"""Shared fixture: a tiny random-weight BERT checkpoint on disk.

Everything runs offline; the checkpoint is built from a handwritten
vocabulary file and saved once per session. Weights are random, so tests
assert mechanics (shapes, parity, protocol behavior), never task skill.
"""

import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import pytest
import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

from mlmserver import MaskedLmBackend

WORDS = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "is", "was", "of", "in", "born", "capital", "city",
    "good", "bad", "dog", "cat", "runs", "sleeps", "paris", "london",
    "rome", "france", "england", "italy", "he", "she", "big", "small",
    "red", "blue",
]

HIDDEN = 16


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-mlm")
    (root / "vocab.txt").write_text("\n".join(WORDS) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(vocab=str(root / "vocab.txt"))
    tokenizer.save_pretrained(root)
    torch.manual_seed(7)
    config = BertConfig(
        vocab_size=len(WORDS),
        hidden_size=HIDDEN,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    BertForMaskedLM(config).save_pretrained(root)
    return root


@pytest.fixture(scope="session")
def backend(model_dir):
    return MaskedLmBackend(model_dir)
