from __future__ import annotations

from pathlib import Path

import pytest

from fixture_docs import DOCS


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> Path:
    """A local checkpoint: 2-layer GPT-2 with a word-level fast tokenizer.

    Built from the fixture vocabulary so no network access is needed.
    """
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import GPT2Config, GPT2Model, PreTrainedTokenizerFast

    words = sorted({w for text in DOCS.values() for w in text.split()})
    vocab = {"[UNK]": 0}
    for word in words:
        vocab[word] = len(vocab)
    tokenizer = Tokenizer(models.WordLevel(vocab, unk_token="[UNK]"))
    tokenizer.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(tokenizer_object=tokenizer, unk_token="[UNK]")

    torch.manual_seed(7)
    config = GPT2Config(vocab_size=len(vocab), n_positions=64, n_embd=16,
                        n_layer=2, n_head=2, bos_token_id=0, eos_token_id=0)
    model = GPT2Model(config)
    model.eval()

    model_dir = tmp_path_factory.mktemp("tiny-model")
    fast.save_pretrained(model_dir)
    model.save_pretrained(model_dir)
    return model_dir


@pytest.fixture(scope="session")
def reference_tsv(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("refdata") / "reference.tsv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc_id, text in DOCS.items():
            fh.write(f"{doc_id}\t{text}\n")
    return path
