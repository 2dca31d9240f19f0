"""Session fixtures for the two heavy acceptance experiments.

Both are fully seeded, so every run reproduces the same numbers; the
fixtures record their own wall time because the acceptance criteria bound
the complete experiment, not just the final assertion.
"""

import time

import numpy as np
import pytest

from plex.classifier import HeadTrainConfig, train_head
from plex.datasetgen import DatasetConfig, build_dataset
from plex.encoder import EmbeddingSet, ToyEncoderParams, encode_toy, sentence_from_words
from plex.siamese import SiameseParams, TrainConfig, TrainingPair, plex_score, train_plex

POS_TRIGGERS = ["joy", "love", "bright"]
NEG_TRIGGERS = ["sad", "fear", "gloom"]
FILLERS = "the a it was and then house road tree chair window morning paper coffee door town".split()


def make_trigger_corpus(n: int, seed: int, n_fillers: int = 7):
    """Sentences whose class is decided by exactly one trigger word."""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n):
        label = int(rng.integers(0, 2))
        trigger = (POS_TRIGGERS if label else NEG_TRIGGERS)[int(rng.integers(0, 3))]
        words = [FILLERS[j] for j in rng.integers(0, len(FILLERS), size=n_fillers)]
        words.insert(int(rng.integers(0, n_fillers + 1)), trigger)
        corpus.append(sentence_from_words(words, sid=f"s{i}", label=label))
    return corpus


@pytest.fixture(scope="session")
def trigger_pipeline():
    """500 trigger sentences, a d=64 encoder, and a head fit to 100% train accuracy."""
    t0 = time.perf_counter()
    enc = ToyEncoderParams(seed=7, d=64, ff=128)
    corpus = make_trigger_corpus(500, seed=1)
    embeddings = [encode_toy(s, enc) for s in corpus]
    head = train_head([(e, e.label) for e in embeddings],
                      HeadTrainConfig(epochs=500, seed=0, lr=1e-2))
    return {"enc": enc, "corpus": corpus, "embeddings": embeddings, "head": head,
            "setup_s": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def lime_labelled_plex(trigger_pipeline):
    """Siamese scorer trained on surrogate labels for the trigger corpus."""
    t0 = time.perf_counter()
    pairs, manifest = build_dataset(
        trigger_pipeline["corpus"], trigger_pipeline["enc"], trigger_pipeline["head"],
        DatasetConfig(explainer="lime", n_samples=256, seed=5))
    params, history = train_plex(pairs, TrainConfig(
        seed=2, batch_size=32, epochs=700, dropout=False,
        early_stop_window=30, early_stop_delta=1e-5))
    return {"pairs": pairs, "manifest": manifest, "params": params, "history": history,
            "train_s": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def planted_run():
    """Labels generated by a hidden network; a fresh one trained to recover them.

    1000 synthetic sentences of 10 words at d=32 give the 10k training pairs;
    the first 200 sentences are the held-in evaluation set.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(123)
    teacher = SiameseParams.create(d=32, seed=99)
    n_words = 10
    sentences, pairs = [], []
    for i in range(1000):
        cls = rng.normal(size=32)
        words = rng.normal(size=(n_words, 32))
        labels = np.array([plex_score(teacher, cls, words[w]) for w in range(n_words)])
        emb = EmbeddingSet(sid=f"p{i}", words_text=[f"w{k}" for k in range(n_words)],
                           cls=cls, words=words, dim=32)
        sentences.append((emb, labels))
        for w in range(n_words):
            pairs.append(TrainingPair(h_cls=cls, h_w=words[w], fi=float(labels[w]),
                                      sid=emb.sid, widx=w))
    params, history = train_plex(pairs, TrainConfig(
        seed=1, batch_size=32, epochs=800, dropout=False,
        early_stop_window=40, early_stop_delta=1e-5))
    return {"teacher": teacher, "sentences": sentences, "pairs": pairs,
            "params": params, "history": history, "elapsed_s": time.perf_counter() - t0}
