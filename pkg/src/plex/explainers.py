"""Perturbation-based word-importance baselines.

Three routes to a score vector: a local linear surrogate fit on random
word-deletion masks (lime), Shapley-kernel weighted regression over sampled
coalitions (shap), and exact Shapley values by full coalition enumeration
(exact, the oracle the sampler approximates). All of them drive an abstract
mask -> class-probabilities model, so the same code explains the toy
pipeline and tabulated predictions exported from real models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .classifier import HeadParams, classify_masked, predict
from .encoder import EncodeCounter, TokenizedSentence, ToyEncoderParams, encode_toy
from .errors import DataFormatError, PlexError, ShapeError

EXACT_WORD_BUDGET = 12  # 2^M coalition enumerations must stay desk-scale


@dataclass
class ImportanceVector:
    """Per-word scores in [-1, 1] aligned to a sentence's words."""

    sid: str
    scores: np.ndarray
    target_class: int | None
    method: str  # lime | shap | exact | plex

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"non-finite importance scores (sentence {self.sid!r})")
        if self.scores.size and np.max(np.abs(self.scores)) > 1.0 + 1e-9:
            raise ValueError(f"scores of sentence {self.sid!r} exceed [-1, 1]")

    @property
    def n_words(self) -> int:
        return int(self.scores.size)


def normalize_scores(raw) -> np.ndarray:
    """Scale so max |score| becomes 1; signs, ranking and zeros are preserved."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("no scores to normalize")
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite raw scores")
    peak = np.max(np.abs(raw))
    return raw / peak if peak > 0 else raw.copy()


def rank_by_magnitude(scores) -> list[int]:
    """Word indices sorted by |score| descending; ties go to the lower index."""
    scores = np.asarray(scores)
    return sorted(range(scores.size), key=lambda i: (-abs(scores[i]), i))


# --- mask models --------------------------------------------------------------


class SentenceMaskModel:
    """Masked re-classification of one sentence through encoder + head."""

    def __init__(self, sentence: TokenizedSentence, enc_params: ToyEncoderParams,
                 head: HeadParams, counter: EncodeCounter | None = None):
        self.sentence = sentence
        self.enc_params = enc_params
        self.head = head
        self.counter = counter
        self.n_words = sentence.n_words

    def probs(self, mask: np.ndarray) -> np.ndarray:
        return classify_masked(self.sentence, mask, self.enc_params, self.head, counter=self.counter).probs


class TableMaskModel:
    """Masked predictions looked up from precomputed (mask, probs) records."""

    def __init__(self, n_words: int, table: dict[bytes, np.ndarray]):
        self.n_words = n_words
        self.table = table

    @classmethod
    def from_records(cls, n_words: int, records) -> "TableMaskModel":
        table = {}
        for mask, probs in records:
            m = np.asarray(mask, dtype=np.uint8)
            if m.shape != (n_words,):
                raise ShapeError(f"tabulated mask length {m.shape} != word count {n_words}")
            table[m.tobytes()] = np.asarray(probs, dtype=np.float64)
        return cls(n_words, table)

    def probs(self, mask: np.ndarray) -> np.ndarray:
        key = np.asarray(mask, dtype=np.uint8).tobytes()
        try:
            return self.table[key]
        except KeyError:
            raise DataFormatError(
                f"mask {list(np.frombuffer(key, dtype=np.uint8))} not present in tabulated predictions"
            ) from None


def load_masked_predictions(path) -> dict[str, list[tuple[np.ndarray, np.ndarray]]]:
    """Read (mask, probs) JSONL records grouped by sentence id."""
    out: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid = rec["id"]
                mask = np.asarray(rec["mask"], dtype=np.uint8)
                probs = np.asarray(rec["probs"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"line {lineno}: malformed masked-prediction record ({exc})") from exc
            out.setdefault(sid, []).append((mask, probs))
    return out


def save_masks(masks_by_sid: dict[str, np.ndarray], path) -> None:
    """Write one {"id", "masks"} JSONL line per sentence for external evaluation."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid, masks in masks_by_sid.items():
            fh.write(json.dumps({"id": sid, "masks": np.asarray(masks, dtype=np.uint8).tolist()}) + "\n")


# --- mask sampling ------------------------------------------------------------


def _enumerate_masks(n_words: int, include_empty: bool, include_full: bool) -> np.ndarray:
    codes = np.arange(2**n_words, dtype=np.uint64)
    if not include_empty:
        codes = codes[1:]
    if not include_full:
        codes = codes[codes != 2**n_words - 1]
    return (codes[:, None] >> np.arange(n_words, dtype=np.uint64)[None, :]).astype(np.uint8) & 1


def lime_masks(n_words: int, n_samples: int, seed: int) -> np.ndarray:
    """Keep-masks for the surrogate fit: never empty, all-ones included once.

    When the full mask space fits the budget (2^M <= n_samples) every
    non-empty mask is enumerated instead of sampled.
    """
    if 2**n_words <= n_samples:
        return _enumerate_masks(n_words, include_empty=False, include_full=True)
    rng = np.random.default_rng(seed)
    masks = np.zeros((n_samples, n_words), dtype=np.uint8)
    masks[0, :] = 1
    for row in range(1, n_samples):
        size = int(rng.integers(1, n_words))  # 1..M-1; the full mask is row 0
        masks[row, rng.choice(n_words, size=size, replace=False)] = 1
    return masks


def shap_masks(n_words: int, n_samples: int, seed: int) -> np.ndarray:
    """Coalition masks for the kernel regression; row 0 is always empty.

    Interior coalitions (neither empty nor full) feed the regression; the
    empty row supplies the base value. Exhaustive when they fit the budget.
    """
    if 2**n_words - 2 <= n_samples - 1:
        interior = _enumerate_masks(n_words, include_empty=False, include_full=False)
        return np.vstack([np.zeros((1, n_words), dtype=np.uint8), interior])
    rng = np.random.default_rng(seed)
    masks = np.zeros((n_samples, n_words), dtype=np.uint8)
    for row in range(1, n_samples):
        size = int(rng.integers(1, n_words))
        masks[row, rng.choice(n_words, size=size, replace=False)] = 1
    return masks


def shapley_kernel_weight(n_words: int, coalition_size: int) -> float:
    """(M-1) / (C(M,s) * s * (M-s)) for interior coalition sizes."""
    m, s = n_words, coalition_size
    if s <= 0 or s >= m:
        raise ValueError(f"kernel weight undefined for coalition size {s} of {m}")
    return (m - 1) / (math.comb(m, s) * s * (m - s))


# --- surrogate fits -----------------------------------------------------------


def _weighted_ridge(masks: np.ndarray, y: np.ndarray, weights: np.ndarray, lam: float) -> np.ndarray:
    """Weighted ridge with unpenalized intercept; returns per-word coefficients."""
    x = np.hstack([np.ones((masks.shape[0], 1)), masks.astype(np.float64)])
    wx = x * weights[:, None]
    lhs = x.T @ wx
    penalty = np.full(x.shape[1], lam)
    penalty[0] = 0.0
    lhs += np.diag(penalty)
    rhs = wx.T @ y
    try:
        beta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise PlexError("degenerate design matrix: masks do not identify the coefficients") from exc
    return beta[1:]


def lime_raw_scores(model, target: int, n_samples: int, seed: int,
                    kernel_width: float | None = None, ridge_lambda: float = 1e-3) -> np.ndarray:
    """Unnormalized surrogate coefficients for one sentence.

    Masks are weighted by exp(-D^2 / width^2) with D the cosine distance to
    the all-ones mask; a single-word sentence short-circuits to
    sign(f(x) - f(empty)).
    """
    m = model.n_words
    if m < 1:
        raise ValueError("cannot explain an empty sentence")
    if m == 1:
        fx = model.probs(np.ones(1, dtype=np.uint8))[target]
        f0 = model.probs(np.zeros(1, dtype=np.uint8))[target]
        return np.array([math.copysign(1.0, fx - f0) if fx != f0 else 0.0])
    if n_samples < m + 2:
        raise ValueError(f"need at least {m + 2} samples for {m} words, got {n_samples}")
    masks = lime_masks(m, n_samples, seed)
    if np.all(masks == masks[0]):
        raise PlexError("degenerate design matrix: all sampled masks identical")
    y = np.array([model.probs(mask)[target] for mask in masks])
    width = kernel_width if kernel_width is not None else 0.25 * math.sqrt(m)
    sizes = masks.sum(axis=1)
    cos_dist = 1.0 - np.sqrt(sizes / m)
    weights = np.exp(-(cos_dist**2) / width**2)
    return _weighted_ridge(masks, y, weights, ridge_lambda)


def shap_raw_scores(model, target: int, fx: float, n_samples: int, seed: int) -> np.ndarray:
    """Unnormalized Shapley value estimates via kernel-weighted regression.

    The empty and full coalitions never enter the regression; they pin the
    intercept and the efficiency constraint sum(phi) = f(x) - f(empty),
    which therefore holds exactly by construction.
    """
    m = model.n_words
    if m < 1:
        raise ValueError("cannot explain an empty sentence")
    f0 = float(model.probs(np.zeros(m, dtype=np.uint8))[target])
    delta = fx - f0
    if m == 1:
        return np.array([delta])
    if n_samples < 2 * m:
        raise ValueError(f"need at least {2 * m} samples for {m} words, got {n_samples}")
    masks = shap_masks(m, n_samples, seed)
    interior = masks[1:]
    y = np.array([model.probs(mask)[target] for mask in interior])
    weights = np.array([shapley_kernel_weight(m, int(s)) for s in interior.sum(axis=1)])
    z = interior.astype(np.float64)
    # Eliminate the last coefficient through the efficiency constraint.
    zl = z[:, -1]
    x = z[:, :-1] - zl[:, None]
    rhs = y - f0 - zl * delta
    wx = x * weights[:, None]
    try:
        phi_head = np.linalg.solve(x.T @ wx, wx.T @ rhs)
    except np.linalg.LinAlgError as exc:
        raise PlexError("singular constrained system: sampled coalitions do not identify phi") from exc
    return np.append(phi_head, delta - phi_head.sum())


def exact_shapley_raw_scores(model, target: int) -> np.ndarray:
    """Exact Shapley values by evaluating the model on every coalition."""
    m = model.n_words
    if m > EXACT_WORD_BUDGET:
        raise ValueError(f"{m} words exceed the exact enumeration budget of {EXACT_WORD_BUDGET}")
    values = np.empty(2**m)
    for code in range(2**m):
        mask = (code >> np.arange(m)) & 1
        values[code] = model.probs(mask.astype(np.uint8))[target]
    fact = [math.factorial(i) for i in range(m + 1)]
    size_weight = [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)]
    phi = np.zeros(m)
    for i in range(m):
        bit = 1 << i
        for code in range(2**m):
            if code & bit:
                continue
            s = int(code).bit_count()
            phi[i] += size_weight[s] * (values[code | bit] - values[code])
    return phi


# --- sentence-level entry points ----------------------------------------------


def _target_and_fx(sentence: TokenizedSentence, enc_params: ToyEncoderParams,
                   head: HeadParams, counter: EncodeCounter | None):
    emb = encode_toy(sentence, enc_params, counter=counter)
    dist = predict(emb.cls, head)
    return dist.argmax, float(dist.probs[dist.argmax])


def lime_explain(sentence: TokenizedSentence, enc_params: ToyEncoderParams, head: HeadParams,
                 n_samples: int, seed: int, kernel_width: float | None = None,
                 ridge_lambda: float = 1e-3, counter: EncodeCounter | None = None) -> ImportanceVector:
    model = SentenceMaskModel(sentence, enc_params, head, counter=counter)
    target, _ = _target_and_fx(sentence, enc_params, head, counter)
    raw = lime_raw_scores(model, target, n_samples, seed, kernel_width, ridge_lambda)
    return ImportanceVector(sid=sentence.sid, scores=normalize_scores(raw), target_class=target, method="lime")


def shap_explain(sentence: TokenizedSentence, enc_params: ToyEncoderParams, head: HeadParams,
                 n_samples: int, seed: int, counter: EncodeCounter | None = None) -> ImportanceVector:
    model = SentenceMaskModel(sentence, enc_params, head, counter=counter)
    target, fx = _target_and_fx(sentence, enc_params, head, counter)
    raw = shap_raw_scores(model, target, fx, n_samples, seed)
    return ImportanceVector(sid=sentence.sid, scores=normalize_scores(raw), target_class=target, method="shap")


def exact_shapley(sentence: TokenizedSentence, enc_params: ToyEncoderParams, head: HeadParams,
                  counter: EncodeCounter | None = None) -> ImportanceVector:
    model = SentenceMaskModel(sentence, enc_params, head, counter=counter)
    target, _ = _target_and_fx(sentence, enc_params, head, counter)
    raw = exact_shapley_raw_scores(model, target)
    return ImportanceVector(sid=sentence.sid, scores=normalize_scores(raw), target_class=target, method="exact")


# --- serialization ------------------------------------------------------------


def save_scores(vectors, path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for iv in vectors:
            rec = {"id": iv.sid, "method": iv.method, "class": iv.target_class,
                   "scores": [float(s) for s in iv.scores]}
            fh.write(json.dumps(rec) + "\n")
            n += 1
    return n


def load_scores(path) -> list[ImportanceVector]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(ImportanceVector(sid=rec["id"], scores=np.asarray(rec["scores"]),
                                            target_class=rec["class"], method=rec["method"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"line {lineno}: malformed importance record ({exc})") from exc
    return out
