"""Fixtures: a desk-scale fine-tuned checkpoint built offline.

The sandbox has no model-hub access, so the tests synthesize a small
BERT-style checkpoint (word-level vocabulary, hidden size 64), fine-tune it
on a trigger-word task until it actually depends on the triggers, and save
it to disk. A local directory is a valid model id for the exporter.
"""

import json
import os

import numpy as np
import pytest
import torch

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, processors
from transformers import BertConfig, BertForSequenceClassification, BertTokenizerFast

POS_TRIGGERS = ["joy", "love", "bright"]
NEG_TRIGGERS = ["sad", "fear", "gloom"]
FILLERS = "the a it was and then house road tree chair window morning paper coffee door town".split()


def make_corpus(n: int, seed: int, n_fillers: int = 7) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = int(rng.integers(0, 2))
        trigger = (POS_TRIGGERS if label else NEG_TRIGGERS)[int(rng.integers(0, 3))]
        words = [FILLERS[j] for j in rng.integers(0, len(FILLERS), size=n_fillers)]
        words.insert(int(rng.integers(0, n_fillers + 1)), trigger)
        out.append({"id": f"s{i}", "text": " ".join(words), "label": label})
    return out


def write_corpus(corpus: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    """Fine-tuned tiny checkpoint directory + its training corpus."""
    torch.manual_seed(0)
    torch.set_num_threads(1)
    root = tmp_path_factory.mktemp("ckpt")

    words = sorted(set(POS_TRIGGERS + NEG_TRIGGERS + FILLERS))
    vocab = {t: i for i, t in enumerate(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words)}
    backend = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]"))
    backend.normalizer = normalizers.BertNormalizer(lowercase=True)
    backend.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    backend.post_processor = processors.BertProcessing(
        sep=("[SEP]", vocab["[SEP]"]), cls=("[CLS]", vocab["[CLS]"]))
    tokenizer = BertTokenizerFast(tokenizer_object=backend, unk_token="[UNK]",
                                  pad_token="[PAD]", cls_token="[CLS]",
                                  sep_token="[SEP]", mask_token="[MASK]")

    config = BertConfig(
        vocab_size=len(vocab), hidden_size=64, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=128, max_position_embeddings=64,
        num_labels=2,
    )
    model = BertForSequenceClassification(config)

    corpus = make_corpus(200, seed=3)
    texts = [rec["text"] for rec in corpus]
    labels = torch.tensor([rec["label"] for rec in corpus])
    enc = tokenizer(texts, padding=True, return_tensors="pt")

    # 12 epochs reaches 100% train accuracy without saturating the softmax;
    # graded probabilities keep the surrogate labels informative.
    optimizer = torch.optim.Adam(model.parameters(), lr=5e-4)
    model.train()
    for _ in range(12):
        perm = torch.randperm(len(texts))
        for start in range(0, len(texts), 32):
            idx = perm[start:start + 32]
            out = model(input_ids=enc["input_ids"][idx],
                        attention_mask=enc["attention_mask"][idx],
                        labels=labels[idx])
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
    model.eval()
    with torch.no_grad():
        preds = model(**enc).logits.argmax(dim=-1)
    accuracy = float((preds == labels).float().mean())
    assert accuracy > 0.95, f"fixture checkpoint underfit ({accuracy:.2f})"

    save_dir = root / "model"
    model.save_pretrained(save_dir)
    tokenizer.save_pretrained(save_dir)
    return {"dir": str(save_dir), "corpus": corpus, "accuracy": accuracy}
