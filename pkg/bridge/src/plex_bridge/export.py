"""Run a fine-tuned sequence-classification checkpoint and write interchange JSONL.

The exporter is a pure producer: it emits the embedding interchange format
(contextual hidden states with word alignment and class probabilities) and
masked-prediction tables, and knows nothing about their consumers.

Words are whitespace chunks of the raw text; each word's vector is the mean
of its subword hidden states (computed here, so every consumer sees one
aggregation convention). Special tokens never enter the alignment.
"""

from __future__ import annotations

import json
import logging

import numpy as np
import torch
from transformers import AutoModelForSequenceClassification, AutoTokenizer

log = logging.getLogger(__name__)


def load_checkpoint(model_id: str, device: str = "cpu"):
    """Resolve tokenizer + model from a hub id or local directory."""
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModelForSequenceClassification.from_pretrained(model_id)
    model.to(device)
    model.eval()
    return tokenizer, model


def read_corpus(path) -> list[dict]:
    """JSONL corpus: {"id", "text", "label"?} per line."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append({"id": str(rec["id"]), "text": rec["text"],
                            "label": rec.get("label")})
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"line {lineno}: bad corpus record ({exc})") from exc
    return out


def _f32(arr) -> list[float]:
    return [float(v) for v in np.asarray(arr, dtype=np.float32)]


def _align(tokenizer, words: list[str]):
    """Tokenize pre-split words; returns (encoding, tokens, word_map).

    word_map[w] lists positions into the special-token-free subword list.
    Returns None when any word vanishes under the tokenizer (no alignment).
    """
    enc = tokenizer(words, is_split_into_words=True, truncation=True,
                    return_tensors="pt")
    word_ids = enc.word_ids(0)
    tokens = []
    word_map: list[list[int]] = [[] for _ in words]
    keep_positions = []
    for pos, wid in enumerate(word_ids):
        if wid is None:
            continue  # [CLS]/[SEP] and friends stay out of the alignment
        word_map[wid].append(len(tokens))
        tokens.append(tokenizer.convert_ids_to_tokens(int(enc["input_ids"][0, pos])))
        keep_positions.append(pos)
    if any(not idxs for idxs in word_map):
        return None
    return enc, tokens, word_map, keep_positions


@torch.no_grad()
def export_embeddings(model_id: str, corpus_path, out_path, layers: str = "last",
                      device: str = "cpu") -> int:
    """One interchange record per sentence; returns the number written.

    ``layers`` is "last" (final hidden state only) or "all" (every encoder
    layer under the "layers" key). Sentences the tokenizer cannot align are
    skipped and logged, never fatal.
    """
    if layers not in ("last", "all"):
        raise ValueError(f"layers must be 'last' or 'all', got {layers!r}")
    tokenizer, model = load_checkpoint(model_id, device=device)
    hidden_size = model.config.hidden_size
    written = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in read_corpus(corpus_path):
            words = rec["text"].split()
            aligned = _align(tokenizer, words) if words else None
            if aligned is None:
                log.warning("skipping sentence %r: tokenizer alignment failed", rec["id"])
                continue
            enc, tokens, word_map, keep_positions = aligned
            out = model(**{k: v.to(device) for k, v in enc.items()},
                        output_hidden_states=True)
            probs = torch.softmax(out.logits[0], dim=-1).cpu().numpy()
            hidden = [h[0].cpu().numpy() for h in out.hidden_states]  # (L+1) x (seq, d)

            def word_vectors(state):
                sub = state[keep_positions]
                return [_f32(sub[idxs].mean(axis=0)) for idxs in word_map]

            record = {
                "id": rec["id"],
                "tokens": tokens,
                "word_map": word_map,
            }
            if rec["label"] is not None:
                record["label"] = int(rec["label"])
            record["cls"] = _f32(hidden[-1][0])
            record["words"] = word_vectors(hidden[-1])
            record["probs"] = _f32(probs)
            if layers == "all":
                record["layers"] = {
                    str(li): {"cls": _f32(hidden[li][0]), "words": word_vectors(hidden[li])}
                    for li in range(1, len(hidden))
                }
            record["meta"] = {"dim": int(hidden_size), "model": str(model_id)}
            fh.write(json.dumps(record) + "\n")
            written += 1
    return written


def read_masks(path) -> dict[str, list[list[int]]]:
    """JSONL of {"id", "masks": [[0/1, ...], ...]} keyed by sentence id."""
    out: dict[str, list[list[int]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[str(rec["id"])] = [list(map(int, m)) for m in rec["masks"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"line {lineno}: bad mask record ({exc})") from exc
    return out


def _masked_text(words: list[str], mask: list[int], mode: str, mask_token: str) -> str:
    if mode == "delete":
        return " ".join(w for w, keep in zip(words, mask) if keep)
    return " ".join(w if keep else mask_token for w, keep in zip(words, mask))


@torch.no_grad()
def export_masked_predictions(model_id: str, corpus_path, masks_path, out_path,
                              mode: str = "delete", batch_size: int = 64,
                              device: str = "cpu") -> int:
    """Class probabilities for every (sentence, keep-mask) pair; returns the count.

    ``mode`` "delete" drops masked-out words; "mask" substitutes the
    tokenizer's mask token. An all-zero mask evaluates the empty sequence,
    which supplies the model's base value.
    """
    if mode not in ("delete", "mask"):
        raise ValueError(f"mode must be 'delete' or 'mask', got {mode!r}")
    tokenizer, model = load_checkpoint(model_id, device=device)
    if mode == "mask" and tokenizer.mask_token is None:
        raise ValueError("tokenizer has no mask token; use mode='delete'")
    masks_by_sid = read_masks(masks_path)
    corpus = {rec["id"]: rec for rec in read_corpus(corpus_path)}
    missing = sorted(set(masks_by_sid) - set(corpus))
    if missing:
        raise ValueError(f"masks reference sentences missing from the corpus: {missing[:5]}")

    written = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for sid, masks in masks_by_sid.items():
            words = corpus[sid]["text"].split()
            bad = [m for m in masks if len(m) != len(words)]
            if bad:
                raise ValueError(f"sentence {sid!r}: mask length {len(bad[0])} != "
                                 f"{len(words)} words")
            texts = [_masked_text(words, m, mode, tokenizer.mask_token) for m in masks]
            probs = np.empty((len(texts), model.config.num_labels))
            for start in range(0, len(texts), batch_size):
                chunk = texts[start:start + batch_size]
                enc = tokenizer(chunk, padding=True, truncation=True, return_tensors="pt")
                out = model(**{k: v.to(device) for k, v in enc.items()})
                probs[start:start + len(chunk)] = torch.softmax(out.logits, dim=-1).cpu().numpy()
            for m, p in zip(masks, probs):
                fh.write(json.dumps({"id": sid, "mask": m, "probs": _f32(p)}) + "\n")
                written += 1
    return written
