"""Build the (CLS, word, importance) pair dataset by explaining a corpus.

Each sentence is encoded once, explained w.r.t. its predicted class, and
every word embedding is paired with the sentence CLS plus that word's score.
A sentence whose explanation fails is logged and skipped; one bad sentence
never aborts a long build.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .classifier import HeadParams, predict
from .encoder import EncodeCounter, TokenizedSentence, ToyEncoderParams, encode_toy
from .errors import DataFormatError, PlexError
from .explainers import (
    ImportanceVector,
    SentenceMaskModel,
    TableMaskModel,
    lime_raw_scores,
    normalize_scores,
    shap_raw_scores,
)
from .parallel import ordered_map
from .siamese import TrainingPair

log = logging.getLogger(__name__)


@dataclass
class DatasetConfig:
    explainer: str = "lime"  # lime | shap
    n_samples: int = 256
    seed: int = 0
    kernel_width: float | None = None
    ridge_lambda: float = 1e-3

    def __post_init__(self):
        if self.explainer not in ("lime", "shap"):
            raise ValueError(f"unknown explainer {self.explainer!r}")


def _explain_one(model, target: int, fx: float, config: DatasetConfig) -> np.ndarray:
    if config.explainer == "lime":
        raw = lime_raw_scores(model, target, config.n_samples, config.seed,
                              config.kernel_width, config.ridge_lambda)
    else:
        raw = shap_raw_scores(model, target, fx, config.n_samples, config.seed)
    return normalize_scores(raw)


def build_dataset(corpus: list[TokenizedSentence], enc_params: ToyEncoderParams,
                  head: HeadParams, config: DatasetConfig,
                  counter: EncodeCounter | None = None):
    """Returns (pairs, manifest). The manifest records every knob that shaped the data."""
    if not corpus:
        raise ValueError("empty corpus")

    def explain_sentence(sentence: TokenizedSentence):
        try:
            emb = encode_toy(sentence, enc_params, counter=counter)
            dist = predict(emb.cls, head)
            model = SentenceMaskModel(sentence, enc_params, head, counter=counter)
            scores = _explain_one(model, dist.argmax, float(dist.probs[dist.argmax]), config)
        except (PlexError, ValueError) as exc:
            log.warning("skipping sentence %r: %s", sentence.sid, exc)
            return None
        return [TrainingPair(h_cls=emb.cls, h_w=emb.words[w], fi=float(scores[w]),
                             sid=sentence.sid, widx=w, method=config.explainer)
                for w in range(emb.n_words)]

    results = ordered_map(explain_sentence, corpus)
    pairs: list[TrainingPair] = []
    skipped: list[str] = []
    for sentence, result in zip(corpus, results):
        if result is None:
            skipped.append(sentence.sid)
        else:
            pairs.extend(result)
    manifest = {
        **asdict(config),
        "encoder": enc_params.model_tag(),
        "sentences": len(corpus),
        "skipped": len(skipped),
        "skipped_ids": skipped,
        "pairs": len(pairs),
        "dim": enc_params.d,
    }
    return pairs, manifest


def pairs_from_scores(embeddings, vectors: list[ImportanceVector], method: str) -> list[TrainingPair]:
    """Join embeddings with precomputed importance vectors (bridge-label path)."""
    by_sid = {iv.sid: iv for iv in vectors}
    pairs = []
    for emb in embeddings:
        iv = by_sid.get(emb.sid)
        if iv is None:
            continue
        if iv.n_words != emb.n_words:
            raise DataFormatError(f"sentence {emb.sid!r}: {iv.n_words} scores for {emb.n_words} words")
        for w in range(emb.n_words):
            pairs.append(TrainingPair(h_cls=emb.cls, h_w=emb.words[w], fi=float(iv.scores[w]),
                                      sid=emb.sid, widx=w, method=method))
    return pairs


def build_dataset_from_table(embeddings, masked_preds: dict, config: DatasetConfig):
    """Pair builder for interchange embeddings with tabulated masked predictions.

    The exporting model's class distribution (record ``probs``) supplies the
    prediction target; every masked probability comes from the table.
    """
    pairs: list[TrainingPair] = []
    skipped: list[str] = []
    total = 0
    for emb in embeddings:
        total += 1
        try:
            if emb.probs is None:
                raise DataFormatError(f"record {emb.sid!r} carries no class probabilities")
            records = masked_preds.get(emb.sid)
            if not records:
                raise DataFormatError(f"no masked predictions for sentence {emb.sid!r}")
            model = TableMaskModel.from_records(emb.n_words, records)
            target = int(np.argmax(emb.probs))
            scores = _explain_one(model, target, float(emb.probs[target]), config)
            for w in range(emb.n_words):
                pairs.append(TrainingPair(h_cls=emb.cls, h_w=emb.words[w], fi=float(scores[w]),
                                          sid=emb.sid, widx=w, method=config.explainer))
        except (PlexError, ValueError) as exc:
            skipped.append(emb.sid)
            log.warning("skipping sentence %r: %s", emb.sid, exc)
    manifest = {
        **asdict(config),
        "encoder": "interchange",
        "sentences": total,
        "skipped": len(skipped),
        "skipped_ids": skipped,
        "pairs": len(pairs),
    }
    return pairs, manifest


def shuffle_and_batch(pairs: list[TrainingPair], batch_size: int = 32, seed: int = 0) -> list[list[TrainingPair]]:
    """Seeded uniform permutation, then fixed-size batches; the final partial batch is kept."""
    if not pairs:
        raise ValueError("no pairs to batch")
    perm = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in perm]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def save_pairs(pairs: list[TrainingPair], path, manifest: dict | None = None,
               manifest_path=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"sid": p.sid, "widx": p.widx, "cls": [float(v) for v in p.h_cls],
                   "word": [float(v) for v in p.h_w], "fi": p.fi, "method": p.method}
            fh.write(json.dumps(rec) + "\n")
    if manifest is not None:
        mpath = manifest_path if manifest_path is not None else f"{path}.manifest.json"
        with open(mpath, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_pairs(path) -> list[TrainingPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(TrainingPair(
                    h_cls=np.asarray(rec["cls"], dtype=np.float64),
                    h_w=np.asarray(rec["word"], dtype=np.float64),
                    fi=float(rec["fi"]), sid=rec["sid"], widx=int(rec["widx"]),
                    method=rec.get("method", ""),
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"line {lineno}: malformed pair record ({exc})") from exc
    return pairs
