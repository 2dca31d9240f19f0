"""Shared-weight Siamese transform: scoring, weighted-L1 training, inference.

One two-layer transform serves both branches; a word's importance is the
cosine similarity between the transformed CLS embedding and the transformed
word embedding, trained to match surrogate-generated labels with the loss
alpha * |label| * |sim - label|. Inference needs no perturbations: one
encoder pass and words+1 transform forwards per sentence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import paramfile
from .classifier import HeadParams, predict
from .encoder import EmbeddingSet, EncodeCounter
from .errors import DegenerateVectorError, DivergenceError, ShapeError
from .explainers import ImportanceVector
from .numerics import NORM_EPS
from .optim import Adam, Sgd

log = logging.getLogger(__name__)


@dataclass
class SiameseParams:
    """One parameter set structurally shared by both branches."""

    w1: np.ndarray  # (d, h1)
    b1: np.ndarray  # (h1,)
    w2: np.ndarray  # (h1, h2)
    b2: np.ndarray  # (h2,)
    dropout: float = 0.5

    def __post_init__(self):
        d, h1 = self.w1.shape
        if self.b1.shape != (h1,) or self.w2.shape[0] != h1 or self.b2.shape != (self.w2.shape[1],):
            raise ShapeError("siamese parameter shapes inconsistent")
        if not all(np.all(np.isfinite(a)) for a in (self.w1, self.b1, self.w2, self.b2)):
            raise ValueError("siamese parameters must be finite")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def h1(self) -> int:
        return self.w1.shape[1]

    @property
    def h2(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def create(cls, d: int, seed: int, h1: int = 128, h2: int = 64, dropout: float = 0.5) -> "SiameseParams":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.standard_normal((d, h1)) * np.sqrt(2.0 / d),
            b1=np.zeros(h1),
            w2=rng.standard_normal((h1, h2)) * np.sqrt(2.0 / h1),
            b2=np.zeros(h2),
            dropout=dropout,
        )


@dataclass
class TrainingPair:
    """(CLS embedding, word embedding, importance label) for one word."""

    h_cls: np.ndarray
    h_w: np.ndarray
    fi: float
    sid: str = ""
    widx: int = 0
    method: str = ""

    def __post_init__(self):
        if self.h_cls.shape != self.h_w.shape or self.h_cls.ndim != 1:
            raise ShapeError(f"pair ({self.sid!r}, {self.widx}) embedding dims differ")
        if not np.isfinite(self.fi) or abs(self.fi) > 1.0 + 1e-9:
            raise ValueError(f"pair ({self.sid!r}, {self.widx}) label {self.fi} outside [-1, 1]")
        if not (np.all(np.isfinite(self.h_cls)) and np.all(np.isfinite(self.h_w))):
            raise ValueError(f"pair ({self.sid!r}, {self.widx}) has non-finite embeddings")


@dataclass
class TrainConfig:
    alpha: float = 1.0
    batch_size: int = 32
    epochs: int = 400
    seed: int = 0
    lr: float = 1e-3
    dropout: bool = True
    optimizer: str = "adam"  # adam | sgd
    early_stop_window: int = 20
    early_stop_delta: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def _forward_batch(params: SiameseParams, h: np.ndarray, drop_mask: np.ndarray | None):
    """Batched branch forward; returns outputs plus the cache for backward."""
    z1 = h @ params.w1 + params.b1
    a = np.maximum(z1, 0.0)
    if drop_mask is not None:
        a_kept = a * drop_mask / (1.0 - params.dropout)
    else:
        a_kept = a
    e = a_kept @ params.w2 + params.b2
    return e, (h, z1, a_kept, drop_mask)


def _backward_batch(params: SiameseParams, cache, de: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    h, z1, a_kept, drop_mask = cache
    grads["w2"] += a_kept.T @ de
    grads["b2"] += de.sum(axis=0)
    da = de @ params.w2.T
    if drop_mask is not None:
        da = da * drop_mask / (1.0 - params.dropout)
    dz1 = da * (z1 > 0)
    grads["w1"] += h.T @ dz1
    grads["b1"] += dz1.sum(axis=0)


def siamese_forward(params: SiameseParams, h: np.ndarray, mode: str = "infer",
                    seed: int | None = None) -> np.ndarray:
    """Transform one embedding; dropout (inverted scaling) only in train mode."""
    if h.shape != (params.d,):
        raise ShapeError(f"input dim {h.shape} does not match transform dim {params.d}")
    if mode == "train" and params.dropout > 0.0:
        rng = np.random.default_rng(seed)
        mask = (rng.random((1, params.h1)) >= params.dropout).astype(np.float64)
    elif mode in ("train", "infer"):
        mask = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    e, _ = _forward_batch(params, h[None, :], mask)
    return e[0]


def plex_score(params: SiameseParams, h_cls: np.ndarray, h_w: np.ndarray,
               counter: EncodeCounter | None = None) -> float:
    """Cosine similarity of the two transformed embeddings, in [-1, 1]."""
    e_cls = siamese_forward(params, h_cls)
    e_w = siamese_forward(params, h_w)
    if counter is not None:
        counter.count_siamese(2)
    return _cosine_checked(e_cls, e_w)


def _cosine_checked(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_EPS or nv < NORM_EPS:
        raise DegenerateVectorError("transformed embedding has zero norm")
    if np.array_equal(u, v):
        return 1.0  # identical branch outputs: exactly aligned, no rounding
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def plex_loss(sim: float, fi: float, alpha: float) -> float:
    """alpha * |fi| * |sim - fi|; zero-importance words contribute nothing."""
    if not -1.0 - 1e-9 <= sim <= 1.0 + 1e-9:
        raise ValueError(f"similarity {sim} outside [-1, 1]")
    if abs(fi) > 1.0 + 1e-9:
        raise ValueError(f"label {fi} outside [-1, 1]")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * abs(fi) * abs(sim - fi)


def batch_loss_and_grads(params: SiameseParams, h_cls: np.ndarray, h_w: np.ndarray,
                         fi: np.ndarray, alpha: float,
                         drop_masks: tuple[np.ndarray, np.ndarray] | None = None):
    """Mean weighted-L1 loss of a batch and gradients w.r.t. the shared weights.

    Both branches run through the same parameters, so their gradient
    contributions accumulate into one gradient dict. Pairs whose transformed
    vectors fall below the norm guard are skipped (and counted), not crashed
    on; the L1 subgradient at sim == fi is taken as 0.
    """
    mask_c, mask_w = drop_masks if drop_masks is not None else (None, None)
    u, cache_c = _forward_batch(params, h_cls, mask_c)
    v, cache_w = _forward_batch(params, h_w, mask_w)
    grads = {"w1": np.zeros_like(params.w1), "b1": np.zeros_like(params.b1),
             "w2": np.zeros_like(params.w2), "b2": np.zeros_like(params.b2)}
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        return float("nan"), grads, 0  # caller reports the divergence
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    valid = (nu >= NORM_EPS) & (nv >= NORM_EPS)
    n_used = int(valid.sum())
    if n_used == 0:
        return 0.0, grads, len(fi)

    nu_s = np.where(valid, nu, 1.0)
    nv_s = np.where(valid, nv, 1.0)
    sims = np.einsum("ij,ij->i", u, v) / (nu_s * nv_s)
    resid = sims - fi
    losses = alpha * np.abs(fi) * np.abs(resid) * valid
    loss = float(losses.sum() / n_used)

    dsim = alpha * np.abs(fi) * np.sign(resid) * valid / n_used
    du = (v / (nu_s * nv_s)[:, None] - (sims / nu_s**2)[:, None] * u) * dsim[:, None]
    dv = (u / (nu_s * nv_s)[:, None] - (sims / nv_s**2)[:, None] * v) * dsim[:, None]
    _backward_batch(params, cache_c, du, grads)
    _backward_batch(params, cache_w, dv, grads)
    return loss, grads, len(fi) - n_used


def train_plex(pairs: list[TrainingPair], config: TrainConfig = TrainConfig()):
    """Seeded mini-batch training; returns (params, per-epoch mean loss history).

    Deterministic for fixed (pairs, config): the shuffle, the dropout masks
    and the optimizer state are all derived from config.seed.
    """
    if not pairs:
        raise ValueError("no training pairs")
    d = pairs[0].h_cls.shape[0]
    if any(p.h_cls.shape[0] != d for p in pairs):
        raise ShapeError("training pairs mix embedding dimensions")

    h_cls = np.stack([p.h_cls for p in pairs])
    h_w = np.stack([p.h_w for p in pairs])
    fi = np.array([p.fi for p in pairs])

    params = SiameseParams.create(d=d, seed=config.seed)
    values = {"w1": params.w1, "b1": params.b1, "w2": params.w2, "b2": params.b2}
    opt = Adam(lr=config.lr) if config.optimizer == "adam" else Sgd(lr=config.lr)
    shuffle_rng = np.random.default_rng(config.seed)
    n = len(pairs)
    history: list[float] = []
    skipped_total = 0

    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            drop_masks = None
            if config.dropout and params.dropout > 0.0:
                drng = np.random.default_rng((config.seed, epoch, b))
                keep = 1.0 - params.dropout
                drop_masks = (
                    (drng.random((len(idx), params.h1)) < keep).astype(np.float64),
                    (drng.random((len(idx), params.h1)) < keep).astype(np.float64),
                )
            loss, grads, skipped = batch_loss_and_grads(
                params, h_cls[idx], h_w[idx], fi[idx], config.alpha, drop_masks)
            skipped_total += skipped
            if not np.isfinite(loss):
                raise DivergenceError("non-finite training loss", epoch=epoch)
            opt.step(values, grads)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)
        w = config.early_stop_window
        if w and len(history) > w and min(history[-w:]) > min(history[:-w]) - config.early_stop_delta:
            break
    if skipped_total:
        log.warning("skipped %d pair evaluations with degenerate transformed vectors", skipped_total)
    return params, history


def plex_explain(e: EmbeddingSet, params: SiameseParams, head: HeadParams | None = None,
                 counter: EncodeCounter | None = None) -> ImportanceVector:
    """Score every word against the sentence CLS in a single pass.

    The CLS embedding is transformed once and reused, so a sentence costs
    exactly words+1 transform forwards. Scores are natively in [-1, 1]; no
    normalization is applied.
    """
    if e.dim != params.d:
        raise ShapeError(f"embedding dim {e.dim} does not match transform dim {params.d}")
    e_cls = siamese_forward(params, e.cls)
    forwards = 1
    scores = np.empty(e.n_words)
    for w in range(e.n_words):
        e_w = siamese_forward(params, e.words[w])
        forwards += 1
        scores[w] = _cosine_checked(e_cls, e_w)
    if counter is not None:
        counter.count_siamese(forwards)
    if head is not None:
        target = predict(e.cls, head).argmax
    elif e.probs is not None:
        target = int(np.argmax(e.probs))
    else:
        target = None
    return ImportanceVector(sid=e.sid, scores=scores, target_class=target, method="plex")


def save_params(params: SiameseParams, path) -> None:
    paramfile.write_siamese(path, params.d, params.h1, params.h2, params.dropout,
                            params.w1, params.b1, params.w2, params.b2)


def load_params(path) -> SiameseParams:
    d, h1, h2, dropout, w1, b1, w2, b2 = paramfile.read_siamese(path)
    return SiameseParams(w1=w1, b1=b1, w2=w2, b2=b2, dropout=dropout)


def save_head(head: HeadParams, path) -> None:
    paramfile.write_head(path, head.weight, head.bias)


def load_head(path) -> HeadParams:
    weight, bias = paramfile.read_head(path)
    return HeadParams(weight=weight, bias=bias)
