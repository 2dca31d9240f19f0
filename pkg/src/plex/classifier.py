"""Classifier head over the CLS embedding, plus masked re-classification.

The head is a single linear layer trained with cross-entropy; masked
re-classification deletes words, re-encodes the survivors and predicts
again, which is the probe primitive behind LIME, SHAP and the stress test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EmbeddingSet, EncodeCounter, TokenizedSentence, ToyEncoderParams, encode_cls, sentence_from_words
from .errors import DivergenceError, ShapeError
from .numerics import softmax
from .optim import Adam


@dataclass
class HeadParams:
    weight: np.ndarray  # (classes, d)
    bias: np.ndarray  # (classes,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("head weight/bias shapes inconsistent")
        if self.weight.shape[0] < 2:
            raise ValueError("head needs at least 2 classes")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ClassDistribution:
    probs: np.ndarray

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def predict(cls_vec: np.ndarray, head: HeadParams) -> ClassDistribution:
    """softmax(W.cls + b) over the classes."""
    if cls_vec.shape != (head.dim,):
        raise ShapeError(f"cls dim {cls_vec.shape} does not match head dim {head.dim}")
    return ClassDistribution(probs=softmax(head.weight @ cls_vec + head.bias))


def head_loss_and_grad(weight: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of a batch and its analytic gradients.

    x is (n, d), y is (n,) integer labels. Returns (loss, grad_w, grad_b).
    """
    logits = x @ weight.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, dlogits.T @ x, dlogits.sum(axis=0)


@dataclass
class HeadTrainConfig:
    classes: int | None = None  # inferred from labels when None
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    target_loss: float = 1e-4


def train_head(examples: list[tuple[EmbeddingSet, int]], config: HeadTrainConfig = HeadTrainConfig()) -> HeadParams:
    """Fit the head by seeded mini-batch Adam on mean cross-entropy.

    Examples are canonicalized by sentence id before the seeded shuffle, so
    the result does not depend on input order. Every class in 0..C-1 must
    appear at least once.
    """
    if not examples:
        raise ValueError("no training examples")
    ordered = sorted(examples, key=lambda pair: pair[0].sid)
    x = np.stack([e.cls for e, _ in ordered])
    y = np.array([label for _, label in ordered], dtype=np.int64)
    classes = config.classes if config.classes is not None else int(y.max()) + 1
    present = set(int(v) for v in np.unique(y))
    missing = [c for c in range(classes) if c not in present]
    if missing:
        raise ValueError(f"no training example for class(es) {missing}")

    rng = np.random.default_rng(config.seed)
    init = np.random.default_rng(config.seed + 1)
    params = {
        "w": init.standard_normal((classes, x.shape[1])) * 0.01,
        "b": np.zeros(classes),
    }
    opt = Adam(lr=config.lr)
    n = x.shape[0]
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, gw, gb = head_loss_and_grad(params["w"], params["b"], x[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError("non-finite cross-entropy", epoch=epoch)
            opt.step(params, {"w": gw, "b": gb})
            losses.append(loss)
        if float(np.mean(losses)) < config.target_loss:
            break
    return HeadParams(weight=params["w"], bias=params["b"])


def classify_masked(sentence: TokenizedSentence, keep_mask, enc_params: ToyEncoderParams,
                    head: HeadParams, counter: EncodeCounter | None = None) -> ClassDistribution:
    """Delete masked-out words, re-encode the survivors, predict.

    An all-zeros mask yields the CLS-only sequence, which defines the
    model's base value f(empty).
    """
    mask = np.asarray(keep_mask)
    words = sentence.words()
    if mask.shape != (len(words),):
        raise ShapeError(f"mask length {mask.shape} != word count {len(words)}")
    survivors = [w for w, keep in zip(words, mask) if keep]
    reduced = sentence_from_words(survivors, sid=sentence.sid, label=sentence.label)
    return predict(encode_cls(reduced, enc_params, counter=counter), head)
