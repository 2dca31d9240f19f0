import filecmp

import numpy as np
import pytest

from plex.classifier import HeadParams
from plex.datasetgen import (
    DatasetConfig,
    build_dataset,
    load_pairs,
    pairs_from_scores,
    save_pairs,
    shuffle_and_batch,
)
from plex.encoder import ToyEncoderParams, encode_toy, sentence_from_words, tokenize
from plex.errors import DataFormatError
from plex.explainers import ImportanceVector
from plex.siamese import TrainingPair


@pytest.fixture(scope="module")
def toy():
    return ToyEncoderParams(seed=11)


@pytest.fixture(scope="module")
def head():
    return HeadParams(weight=np.random.default_rng(0).normal(size=(2, 32)), bias=np.zeros(2))


class TestBuildDataset:
    def test_one_sentence_yields_one_pair_per_word(self, toy, head):
        corpus = [tokenize("alpha beta gamma delta epsilon", sid="s0")]
        pairs, manifest = build_dataset(corpus, toy, head, DatasetConfig(n_samples=32, seed=0))
        assert len(pairs) == 5
        assert manifest["pairs"] == 5
        assert [p.widx for p in pairs] == [0, 1, 2, 3, 4]
        for p in pairs[1:]:
            np.testing.assert_array_equal(p.h_cls, pairs[0].h_cls)

    def test_every_label_in_range_and_counts_match(self, toy, head):
        rng = np.random.default_rng(1)
        vocab = "red green blue stone river cloud lamp".split()
        corpus = [sentence_from_words([vocab[j] for j in rng.integers(0, len(vocab), size=6)],
                                      sid=f"s{i}") for i in range(8)]
        pairs, manifest = build_dataset(corpus, toy, head, DatasetConfig(n_samples=32, seed=0))
        assert len(pairs) == sum(s.n_words for s in corpus)
        assert all(abs(p.fi) <= 1.0 for p in pairs)
        seen = {(p.sid, p.widx) for p in pairs}
        assert len(seen) == len(pairs)
        assert manifest["skipped"] == 0

    def test_corpus_of_400_by_30_words_yields_12000_pairs(self, toy, head):
        rng = np.random.default_rng(2)
        vocab = "one two three four five six seven eight nine ten".split()
        corpus = [sentence_from_words([vocab[j] for j in rng.integers(0, 10, size=30)],
                                      sid=f"s{i:04d}") for i in range(400)]
        # shap with a small budget keeps this desk-scale; the pair count only
        # depends on the corpus shape
        pairs, manifest = build_dataset(corpus, toy, head,
                                        DatasetConfig(explainer="shap", n_samples=60, seed=0))
        assert len(pairs) == 12000
        assert manifest["pairs"] == 12000

    def test_failing_sentence_skipped_not_fatal(self, toy, head):
        corpus = [
            tokenize("too many words " * 12, sid="long"),  # 36 words > samples-2
            tokenize("short and fine", sid="ok"),
        ]
        pairs, manifest = build_dataset(corpus, toy, head, DatasetConfig(n_samples=16, seed=0))
        assert manifest["skipped"] == 1
        assert manifest["skipped_ids"] == ["long"]
        assert {p.sid for p in pairs} == {"ok"}

    def test_same_seed_gives_identical_files(self, toy, head, tmp_path):
        corpus = [tokenize("the quick brown fox jumps", sid=f"s{i}") for i in range(3)]
        for name in ("a.jsonl", "b.jsonl"):
            pairs, manifest = build_dataset(corpus, toy, head, DatasetConfig(n_samples=32, seed=7))
            save_pairs(pairs, tmp_path / name, manifest=manifest,
                       manifest_path=tmp_path / (name + ".manifest"))
        assert filecmp.cmp(tmp_path / "a.jsonl", tmp_path / "b.jsonl", shallow=False)

    def test_empty_corpus_rejected(self, toy, head):
        with pytest.raises(ValueError):
            build_dataset([], toy, head, DatasetConfig())

    def test_worker_count_does_not_change_output(self, toy, head, monkeypatch):
        corpus = [tokenize("the quick brown fox jumps", sid=f"s{i}") for i in range(6)]
        cfg = DatasetConfig(n_samples=32, seed=7)
        monkeypatch.delenv("PLEX_THREADS", raising=False)
        serial, _ = build_dataset(corpus, toy, head, cfg)
        monkeypatch.setenv("PLEX_THREADS", "4")
        threaded, _ = build_dataset(corpus, toy, head, cfg)
        assert len(serial) == len(threaded)
        for a, b in zip(serial, threaded):
            assert (a.sid, a.widx, a.fi) == (b.sid, b.widx, b.fi)
            np.testing.assert_array_equal(a.h_w, b.h_w)


class TestPairsFromScores:
    def test_join_on_sentence_id(self, toy):
        embs = [encode_toy(tokenize("one two three", sid="a"), toy),
                encode_toy(tokenize("four five", sid="b"), toy)]
        vectors = [ImportanceVector(sid="a", scores=np.array([1.0, -0.5, 0.0]),
                                    target_class=1, method="lime")]
        pairs = pairs_from_scores(embs, vectors, method="lime")
        assert [(p.sid, p.widx, p.fi) for p in pairs] == [("a", 0, 1.0), ("a", 1, -0.5), ("a", 2, 0.0)]
        np.testing.assert_array_equal(pairs[0].h_cls, embs[0].cls)

    def test_word_count_mismatch_rejected(self, toy):
        embs = [encode_toy(tokenize("one two three", sid="a"), toy)]
        vectors = [ImportanceVector(sid="a", scores=np.array([1.0]), target_class=1, method="lime")]
        with pytest.raises(DataFormatError):
            pairs_from_scores(embs, vectors, method="lime")


class TestShuffleAndBatch:
    def _pairs(self, n):
        return [TrainingPair(h_cls=np.zeros(2), h_w=np.zeros(2), fi=0.0, sid=f"s{i}")
                for i in range(n)]

    def test_exact_batches(self):
        batches = shuffle_and_batch(self._pairs(64), batch_size=32, seed=0)
        assert [len(b) for b in batches] == [32, 32]

    def test_partial_final_batch_kept(self):
        batches = shuffle_and_batch(self._pairs(33), batch_size=32, seed=0)
        assert [len(b) for b in batches] == [32, 1]

    def test_permutation_is_bijection(self):
        pairs = self._pairs(50)
        batches = shuffle_and_batch(pairs, batch_size=7, seed=3)
        flat = [p.sid for b in batches for p in b]
        assert sorted(flat) == sorted(p.sid for p in pairs)
        assert flat != [p.sid for p in pairs]  # actually shuffled

    def test_seeded(self):
        pairs = self._pairs(40)
        a = shuffle_and_batch(pairs, batch_size=8, seed=5)
        b = shuffle_and_batch(pairs, batch_size=8, seed=5)
        assert [[p.sid for p in batch] for batch in a] == [[p.sid for p in batch] for batch in b]


class TestPairIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        pairs = [TrainingPair(h_cls=rng.normal(size=4), h_w=rng.normal(size=4),
                              fi=float(rng.uniform(-1, 1)), sid=f"s{i}", widx=i, method="lime")
                 for i in range(5)]
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, path)
        loaded = load_pairs(path)
        assert len(loaded) == 5
        for orig, got in zip(pairs, loaded):
            np.testing.assert_array_equal(orig.h_cls, got.h_cls)
            np.testing.assert_array_equal(orig.h_w, got.h_w)
            assert orig.fi == got.fi
            assert got.method == "lime"
