"""Faithfulness and cost evaluation: deletion stress test, top-k overlap,
polarity agreement, and a floating-point cost model cross-checked against
instrumented encoder-pass counts."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .classifier import HeadParams, classify_masked, predict
from .encoder import EncodeCounter, TokenizedSentence, ToyEncoderParams, encode_toy
from .errors import ShapeError
from .explainers import ImportanceVector, rank_by_magnitude
from .siamese import SiameseParams

FLOPS_NOTE = "FLOPs counted as 2 x multiply-adds"


@dataclass
class StressReport:
    """Accuracy against the original prediction as top-scored words are deleted."""

    method: str
    accuracy: dict[int, float]  # k -> fraction in [0, 1]
    flips: list[dict] = field(default_factory=list)
    excluded: int = 0

    def to_dict(self) -> dict:
        return {"method": self.method, "accuracy": {str(k): v for k, v in self.accuracy.items()},
                "excluded": self.excluded, "flips": self.flips}


@dataclass
class AgreementReport:
    """Top-k overlap percentages and polarity-match distributions between two methods."""

    overlap: dict[int, float]  # k -> mean percentage
    polarity: dict[float, list[float]]  # threshold -> per-sentence percentages
    polarity_excluded: dict[float, int]

    def polarity_mean(self, threshold: float) -> float:
        vals = self.polarity[threshold]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "overlap": {str(k): v for k, v in self.overlap.items()},
            "polarity_mean": {str(t): self.polarity_mean(t) for t in self.polarity},
            "polarity_excluded": {str(t): v for t, v in self.polarity_excluded.items()},
            "polarity": {str(t): v for t, v in self.polarity.items()},
        }


@dataclass
class CostReport:
    method: str
    bucket: str  # small | medium | long
    flops: float
    perturbations: int
    encoder_passes: int  # formula
    measured_passes: int | None = None
    wall_time_s: float | None = None
    note: str = FLOPS_NOTE

    def to_dict(self) -> dict:
        return {"method": self.method, "bucket": self.bucket, "flops": self.flops,
                "perturbations": self.perturbations, "encoder_passes": self.encoder_passes,
                "measured_passes": self.measured_passes, "wall_time_s": self.wall_time_s,
                "note": self.note}


def deletion_order(scores: np.ndarray) -> list[int]:
    """Deletion candidates: positive scores first, largest first, ties to lower index."""
    scores = np.asarray(scores)
    return [i for i in sorted(range(scores.size), key=lambda i: (-scores[i], i)) if scores[i] > 0]


def stress_test(testset: list[TokenizedSentence], explainer_fn, enc_params: ToyEncoderParams,
                head: HeadParams, k_max: int = 4, counter: EncodeCounter | None = None) -> StressReport:
    """Delete the top-k positive-score words and re-classify, for k = 0..k_max.

    Accuracy is measured against each sentence's ORIGINAL predicted class, so
    the k=0 row is 1.0 by construction. Sentences with <= k_max words are
    excluded and counted. ``explainer_fn(sentence) -> ImportanceVector``.
    """
    usable = [s for s in testset if s.n_words > k_max]
    excluded = len(testset) - len(usable)
    if not usable:
        raise ValueError(f"no sentence has more than {k_max} words")
    matches = {k: 0 for k in range(k_max + 1)}
    flips: list[dict] = []
    method = ""
    for sentence in usable:
        emb = encode_toy(sentence, enc_params, counter=counter)
        original = predict(emb.cls, head).argmax
        iv = explainer_fn(sentence)
        method = iv.method
        order = deletion_order(iv.scores)
        for k in range(k_max + 1):
            mask = np.ones(sentence.n_words, dtype=np.uint8)
            mask[order[:k]] = 0
            new_class = classify_masked(sentence, mask, enc_params, head, counter=counter).argmax
            if new_class == original:
                matches[k] += 1
            elif k > 0:
                flips.append({"id": sentence.sid, "k": k, "original": original, "new": new_class})
    accuracy = {k: matches[k] / len(usable) for k in range(k_max + 1)}
    return StressReport(method=method, accuracy=accuracy, flips=flips, excluded=excluded)


def topk_overlap(a: ImportanceVector, b: ImportanceVector, k: int) -> float:
    """Percentage of shared words among the two top-k sets (ranked by |score|)."""
    if a.sid != b.sid or a.n_words != b.n_words:
        raise ShapeError(f"mismatched sentences: {a.sid!r}/{a.n_words} vs {b.sid!r}/{b.n_words}")
    if not 1 <= k <= a.n_words:
        raise ValueError(f"k={k} outside 1..{a.n_words}")
    top_a = set(rank_by_magnitude(a.scores)[:k])
    top_b = set(rank_by_magnitude(b.scores)[:k])
    return 100.0 * len(top_a & top_b) / k


def polarity_agreement(a: ImportanceVector, b: ImportanceVector, threshold: float) -> float | None:
    """Sign-match percentage over words where both |scores| reach the threshold.

    Zero scores only match zero scores. Returns None when no word passes the
    threshold (the sentence is excluded from the distribution).
    """
    if a.sid != b.sid or a.n_words != b.n_words:
        raise ShapeError(f"mismatched sentences: {a.sid!r} vs {b.sid!r}")
    sa, sb = a.scores, b.scores
    considered = np.minimum(np.abs(sa), np.abs(sb)) >= threshold
    if not considered.any():
        return None
    match = np.sign(sa[considered]) == np.sign(sb[considered])
    return 100.0 * float(match.mean())


def agreement_report(vectors_a: list[ImportanceVector], vectors_b: list[ImportanceVector],
                     ks: tuple[int, ...] = (1, 2, 3),
                     thresholds: tuple[float, ...] = (0.0, 0.01, 0.05)) -> AgreementReport:
    """Corpus-level agreement between two aligned lists of importance vectors."""
    if len(vectors_a) != len(vectors_b):
        raise ShapeError("score lists have different lengths")
    overlap: dict[int, float] = {}
    for k in ks:
        vals = [topk_overlap(a, b, k) for a, b in zip(vectors_a, vectors_b) if a.n_words >= k]
        if vals:
            overlap[k] = float(np.mean(vals))
    polarity: dict[float, list[float]] = {t: [] for t in thresholds}
    excluded: dict[float, int] = {t: 0 for t in thresholds}
    for a, b in zip(vectors_a, vectors_b):
        for t in thresholds:
            pct = polarity_agreement(a, b, t)
            if pct is None:
                excluded[t] += 1
            else:
                polarity[t].append(pct)
    return AgreementReport(overlap=overlap, polarity=polarity, polarity_excluded=excluded)


# --- cost accounting -----------------------------------------------------------


def length_bucket(n_words: int) -> str:
    if n_words <= 15:
        return "small"
    if n_words <= 25:
        return "medium"
    return "long"


def siamese_forward_flops(params: SiameseParams) -> int:
    """2 x multiply-adds of one transform forward."""
    return 2 * (params.d * params.h1 + params.h1 * params.h2)


def cost_model(method: str, encoder_flops_per_token: float, tokens: int, n_perturbations: int,
               siamese_params: SiameseParams | None = None,
               measured_passes: int | None = None) -> CostReport:
    """Predicted cost of explaining one sentence, plus the pass-count formula.

    Perturbation methods pay one encoder pass per evaluated mask plus the
    original prediction; the single-pass path pays one encoder pass plus
    (tokens + 1) transform forwards.
    """
    if encoder_flops_per_token <= 0 or tokens <= 0:
        raise ValueError("encoder cost and token count must be positive")
    pass_cost = encoder_flops_per_token * tokens
    if method in ("lime", "shap", "exact"):
        passes = n_perturbations + 1
        flops = passes * pass_cost
    elif method == "plex":
        passes = 1
        flops = pass_cost + (tokens + 1) * siamese_forward_flops(siamese_params)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CostReport(method=method, bucket=length_bucket(tokens), flops=flops,
                      perturbations=n_perturbations if method != "plex" else 0,
                      encoder_passes=passes, measured_passes=measured_passes)


def bench(explain_fn, corpus: list[TokenizedSentence], repeats: int = 5) -> dict[str, float]:
    """Median-of-N wall time per sentence, per length bucket.

    ``explain_fn(sentence)`` must perform the complete explanation. The first
    (untimed) sweep warms caches so the medians measure steady state.
    """
    buckets: dict[str, list[TokenizedSentence]] = {}
    for s in corpus:
        buckets.setdefault(length_bucket(s.n_words), []).append(s)
    for group in buckets.values():
        for s in group:
            explain_fn(s)
    out = {}
    for name, group in sorted(buckets.items()):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for s in group:
                explain_fn(s)
            times.append((time.perf_counter() - t0) / len(group))
        out[name] = float(np.median(times))
    return out


# --- emitters -------------------------------------------------------------------


def write_stress_csv(reports: list[StressReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "k", "accuracy"])
        for rep in reports:
            for k in sorted(rep.accuracy):
                writer.writerow([rep.method, k, f"{rep.accuracy[k]:.6f}"])


def write_cost_csv(reports: list[CostReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "bucket", "wall_time_s", "flops", "perturbations",
                         "encoder_passes", "measured_passes", "note"])
        for rep in reports:
            writer.writerow([rep.method, rep.bucket,
                             "" if rep.wall_time_s is None else f"{rep.wall_time_s:.6f}",
                             f"{rep.flops:.0f}", rep.perturbations, rep.encoder_passes,
                             "" if rep.measured_passes is None else rep.measured_passes, rep.note])


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj.to_dict() if hasattr(obj, "to_dict") else obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
