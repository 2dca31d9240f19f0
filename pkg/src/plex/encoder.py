"""Contextual embeddings: a seeded toy transformer plus interchange-file ingestion.

Two sources produce the same ``EmbeddingSet`` shape: the built-in desk-scale
encoder (deterministic in ``(seed, tokens)``) and JSONL files exported from
real models. Downstream code never needs to know which one it got.
"""

from __future__ import annotations

import hashlib
import json
import string
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, ShapeError
from .numerics import euclidean

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_LN_EPS = 1e-6


@dataclass
class TokenizedSentence:
    """Ordered tokens plus the word <-> token alignment.

    ``word_map[w]`` lists the token indices owned by word ``w``; every token
    belongs to exactly one word. An empty token list is only ever produced
    internally (the CLS-only sequence used to score an all-deleted sentence);
    ``tokenize`` never returns one.
    """

    sid: str
    tokens: list[str]
    word_map: list[list[int]]
    label: int | None = None

    def __post_init__(self):
        seen = sorted(i for idxs in self.word_map for i in idxs)
        if seen != list(range(len(self.tokens))):
            raise ValueError(f"word_map does not cover tokens exactly once (sentence {self.sid!r})")
        if any(not idxs for idxs in self.word_map):
            raise ValueError(f"word with no tokens (sentence {self.sid!r})")

    @property
    def n_words(self) -> int:
        return len(self.word_map)

    def words(self) -> list[str]:
        """Display string per word (subword pieces joined, '##' markers dropped)."""
        out = []
        for idxs in self.word_map:
            pieces = [self.tokens[i] for i in idxs]
            out.append(pieces[0] + "".join(p.removeprefix("##") for p in pieces[1:]))
        return out


def tokenize(text: str, sid: str = "", label: int | None = None) -> TokenizedSentence:
    """Lowercase, strip punctuation, split on whitespace; one token per word."""
    words = [w for w in (chunk.translate(_PUNCT_TABLE) for chunk in text.lower().split()) if w]
    if not words:
        raise ValueError("cannot tokenize empty or punctuation-only text")
    return TokenizedSentence(sid=sid, tokens=words, word_map=[[i] for i in range(len(words))], label=label)


def sentence_from_words(words: list[str], sid: str = "", label: int | None = None) -> TokenizedSentence:
    """Build a sentence from already-normalized words (may be empty: CLS-only)."""
    return TokenizedSentence(sid=sid, tokens=list(words), word_map=[[i] for i in range(len(words))], label=label)


@dataclass(frozen=True)
class LayerSlice:
    """Embeddings of one layer: the CLS vector and one row per word."""

    cls: np.ndarray
    words: np.ndarray  # (n_words, d)


@dataclass
class EmbeddingSet:
    """Per-sentence CLS vector and per-word contextual vectors.

    ``layers`` optionally keeps every layer's slice (keyed by layer index,
    1-based); the top-level ``cls``/``words`` are always the final layer.
    ``probs`` carries the exporting model's class distribution when the
    record came from an interchange file that included one.
    """

    sid: str
    words_text: list[str]
    cls: np.ndarray
    words: np.ndarray  # (n_words, d)
    dim: int
    model: str = "toy"
    label: int | None = None
    layers: dict[int, LayerSlice] | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.cls.shape != (self.dim,):
            raise ShapeError(f"cls dim {self.cls.shape} != ({self.dim},) (sentence {self.sid!r})")
        if self.words.ndim != 2 or (self.words.size and self.words.shape[1] != self.dim):
            raise ShapeError(f"word vectors of sentence {self.sid!r} do not all have dim {self.dim}")
        if self.words.shape[0] != len(self.words_text):
            raise ShapeError(f"word vector count != word count (sentence {self.sid!r})")
        if not (np.all(np.isfinite(self.cls)) and np.all(np.isfinite(self.words))):
            raise ValueError(f"non-finite embedding values (sentence {self.sid!r})")
        for layer, sl in (self.layers or {}).items():
            if sl.cls.shape != (self.dim,) or sl.words.shape != self.words.shape:
                raise ShapeError(f"layer {layer} of sentence {self.sid!r} has inconsistent shapes")

    @property
    def n_words(self) -> int:
        return len(self.words_text)


def _hash_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class ToyEncoderParams:
    """Seeded random weights for the desk-scale encoder.

    Small by default (d=32, 2 heads, 2 layers, ff 64) so that brute-force
    oracles over perturbations stay cheap. Weights are drawn once at
    construction; token embeddings are hashed from (salt, token) at encode
    time, so encoding is a pure function of (seed, token sequence).
    """

    seed: int
    d: int = 32
    heads: int = 2
    layers: int = 2
    ff: int = 64
    salt: str = "toy-vocab"
    weights: list[dict[str, np.ndarray]] = field(default_factory=list, repr=False)
    cls_vec: np.ndarray | None = field(default=None, repr=False)
    _tok_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _pos_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError("head count must divide embedding dim")
        if self.layers < 1:
            raise ValueError("need at least one encoder layer")
        if not self.weights:
            rng = np.random.default_rng(self.seed)
            scale = 1.0 / np.sqrt(self.d)
            for _ in range(self.layers):
                self.weights.append({
                    "wq": rng.standard_normal((self.d, self.d)) * scale,
                    "wk": rng.standard_normal((self.d, self.d)) * scale,
                    "wv": rng.standard_normal((self.d, self.d)) * scale,
                    "wo": rng.standard_normal((self.d, self.d)) * scale,
                    "w1": rng.standard_normal((self.d, self.ff)) * scale,
                    "b1": np.zeros(self.ff),
                    "w2": rng.standard_normal((self.ff, self.d)) / np.sqrt(self.ff),
                    "b2": np.zeros(self.d),
                })
            self.cls_vec = _hash_rng(f"seed={self.seed}", "cls").standard_normal(self.d)

    def model_tag(self) -> str:
        return (f"toy:seed={self.seed},d={self.d},heads={self.heads},"
                f"layers={self.layers},ff={self.ff},salt={self.salt}")

    @classmethod
    def from_model_tag(cls, tag: str) -> "ToyEncoderParams":
        if not tag.startswith("toy:"):
            raise DataFormatError(f"not a toy encoder tag: {tag!r}")
        kv = dict(part.split("=", 1) for part in tag[4:].split(","))
        try:
            return cls(seed=int(kv["seed"]), d=int(kv["d"]), heads=int(kv["heads"]),
                       layers=int(kv["layers"]), ff=int(kv["ff"]), salt=kv["salt"])
        except KeyError as exc:
            raise DataFormatError(f"incomplete toy encoder tag: {tag!r}") from exc

    def token_embedding(self, token: str, position: int) -> np.ndarray:
        # Hashing + RNG construction dominates masked re-encoding; cache both parts.
        tok = self._tok_cache.get(token)
        if tok is None:
            tok = _hash_rng(self.salt, "tok", token).standard_normal(self.d)
            self._tok_cache[token] = tok
        pos = self._pos_cache.get(position)
        if pos is None:
            pos = _hash_rng(f"seed={self.seed}", "pos", str(position)).standard_normal(self.d) * 0.1
            self._pos_cache[position] = pos
        return tok + pos


class EncodeCounter:
    """Counts encoder passes and Siamese forwards for cost cross-checks.

    Locked so counts stay exact when sentences are explained from worker
    threads.
    """

    def __init__(self):
        self.encoder_passes = 0
        self.siamese_forwards = 0
        self._lock = threading.Lock()

    def count_encoder_pass(self) -> None:
        with self._lock:
            self.encoder_passes += 1

    def count_siamese(self, n: int) -> None:
        with self._lock:
            self.siamese_forwards += n


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS)


def _self_attention(x: np.ndarray, w: dict[str, np.ndarray], heads: int) -> np.ndarray:
    n, d = x.shape
    dk = d // heads
    q = (x @ w["wq"]).reshape(n, heads, dk).transpose(1, 0, 2)
    k = (x @ w["wk"]).reshape(n, heads, dk).transpose(1, 0, 2)
    v = (x @ w["wv"]).reshape(n, heads, dk).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(dk)
    scores -= scores.max(axis=-1, keepdims=True)
    att = np.exp(scores)
    att /= att.sum(axis=-1, keepdims=True)
    out = (att @ v).transpose(1, 0, 2).reshape(n, d)
    return out @ w["wo"]


def _encoder_stack(tokens: list[str], params: ToyEncoderParams):
    """Yield the (seq_len, d) activation matrix after each encoder layer."""
    rows = [params.cls_vec] + [params.token_embedding(t, i) for i, t in enumerate(tokens)]
    x = np.stack(rows)
    for w in params.weights:
        x = _layer_norm(x + _self_attention(x, w, params.heads))
        hidden = np.maximum(x @ w["w1"] + w["b1"], 0.0)
        x = _layer_norm(x + hidden @ w["w2"] + w["b2"])
        yield x


def encode_cls(sentence: TokenizedSentence, params: ToyEncoderParams,
               counter: EncodeCounter | None = None) -> np.ndarray:
    """Final-layer CLS vector only (the cheap path for masked re-classification)."""
    if counter is not None:
        counter.count_encoder_pass()
    for x in _encoder_stack(sentence.tokens, params):
        pass
    return x[0]


def encode_toy(sentence: TokenizedSentence, params: ToyEncoderParams,
               counter: EncodeCounter | None = None) -> EmbeddingSet:
    """Run the toy encoder over a CLS-prepended token sequence, keeping all layers."""
    if counter is not None:
        counter.count_encoder_pass()
    layers: dict[int, LayerSlice] = {}
    for li, x in enumerate(_encoder_stack(sentence.tokens, params), start=1):
        layers[li] = LayerSlice(cls=x[0].copy(), words=_aggregate_words(x[1:], sentence.word_map))
    final = layers[params.layers]
    return EmbeddingSet(
        sid=sentence.sid, words_text=sentence.words(), cls=final.cls, words=final.words,
        dim=params.d, model=params.model_tag(), label=sentence.label, layers=layers,
    )


def _aggregate_words(token_vecs: np.ndarray, word_map: list[list[int]]) -> np.ndarray:
    """Mean over each word's subword vectors (identity for single-token words)."""
    if not word_map:
        return np.zeros((0, token_vecs.shape[1] if token_vecs.ndim == 2 else 0))
    return np.stack([token_vecs[idxs].mean(axis=0) for idxs in word_map])


# --- interchange format ------------------------------------------------------
#
# JSON-lines, one sentence per line. 32-bit precision is allowed here (and
# only here); everything in memory is float64.


def _f32(arr: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(arr, dtype=np.float32)]


def save_embeddings(sets, path) -> int:
    """Write EmbeddingSets as interchange JSONL; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in sets:
            rec = {
                "id": e.sid,
                "tokens": list(e.words_text),
                "word_map": [[i] for i in range(e.n_words)],
            }
            if e.label is not None:
                rec["label"] = int(e.label)
            rec["cls"] = _f32(e.cls)
            rec["words"] = [_f32(w) for w in e.words]
            if e.probs is not None:
                rec["probs"] = _f32(e.probs)
            if e.layers:
                rec["layers"] = {
                    str(li): {"cls": _f32(sl.cls), "words": [_f32(w) for w in sl.words]}
                    for li, sl in sorted(e.layers.items())
                }
            rec["meta"] = {"dim": e.dim, "model": e.model}
            fh.write(json.dumps(rec) + "\n")
            n += 1
    return n


def _word_vectors(raw, n_tokens: int, word_map: list[list[int]], dim: int, sid: str, lineno: int) -> np.ndarray:
    vecs = np.asarray(raw, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != dim:
        raise DataFormatError(f"line {lineno}: record {sid!r} has a word vector of wrong length")
    n_words = len(word_map)
    if vecs.shape[0] == n_words:
        return vecs
    if vecs.shape[0] == n_tokens:
        return _aggregate_words(vecs, word_map)
    raise DataFormatError(
        f"line {lineno}: record {sid!r} has {vecs.shape[0]} word vectors for "
        f"{n_words} words / {n_tokens} tokens"
    )


def load_embeddings(path):
    """Stream validated EmbeddingSets from an interchange JSONL file.

    Subword (per-token) vectors are aggregated to word vectors by arithmetic
    mean; files that already carry one vector per word pass through. All
    records must share one embedding dimension.
    """
    expected_dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                sid = rec["id"]
                tokens = rec["tokens"]
                word_map = rec["word_map"]
                meta = rec["meta"]
                dim = int(meta["dim"])
                cls = np.asarray(rec["cls"], dtype=np.float64)
            except (KeyError, TypeError) as exc:
                raise DataFormatError(f"line {lineno}: missing or malformed field {exc}") from exc
            if expected_dim is None:
                expected_dim = dim
            elif dim != expected_dim:
                raise DataFormatError(f"line {lineno}: dimension {dim} != {expected_dim} of earlier records")
            if cls.shape != (dim,):
                raise DataFormatError(f"line {lineno}: record {sid!r} cls vector has wrong length")
            try:
                sent = TokenizedSentence(sid=sid, tokens=tokens, word_map=word_map, label=rec.get("label"))
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
            words = _word_vectors(rec["words"], len(tokens), word_map, dim, sid, lineno)
            layers = None
            if rec.get("layers"):
                layers = {}
                for key, sl in rec["layers"].items():
                    lcls = np.asarray(sl["cls"], dtype=np.float64)
                    if lcls.shape != (dim,):
                        raise DataFormatError(f"line {lineno}: record {sid!r} layer {key} cls has wrong length")
                    layers[int(key)] = LayerSlice(
                        cls=lcls,
                        words=_word_vectors(sl["words"], len(tokens), word_map, dim, sid, lineno),
                    )
            probs = None
            if rec.get("probs") is not None:
                probs = np.asarray(rec["probs"], dtype=np.float64)
            try:
                yield EmbeddingSet(
                    sid=sid, words_text=sent.words(), cls=cls, words=words, dim=dim,
                    model=meta.get("model", "unknown"), label=rec.get("label"),
                    layers=layers, probs=probs,
                )
            except ShapeError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc


def layer_distance_matrix(e: EmbeddingSet) -> np.ndarray:
    """(layers x words) Euclidean distances between each layer's CLS and word vectors."""
    if not e.layers:
        raise ValueError(f"sentence {e.sid!r} carries no per-layer embeddings")
    order = sorted(e.layers)
    out = np.empty((len(order), e.n_words))
    for r, li in enumerate(order):
        sl = e.layers[li]
        for w in range(e.n_words):
            out[r, w] = euclidean(sl.cls, sl.words[w])
    return out
