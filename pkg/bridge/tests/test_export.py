import filecmp
import json

import numpy as np
import pytest

from plex_bridge.export import export_embeddings, export_masked_predictions

from conftest import write_corpus


@pytest.fixture(scope="module")
def exported(checkpoint, tmp_path_factory):
    root = tmp_path_factory.mktemp("export")
    corpus_path = root / "corpus.jsonl"
    write_corpus(checkpoint["corpus"][:10], corpus_path)
    out = root / "emb.jsonl"
    n = export_embeddings(checkpoint["dir"], corpus_path, out, layers="all")
    assert n == 10
    return {"corpus_path": corpus_path, "emb_path": out,
            "records": [json.loads(line) for line in open(out)]}


class TestExportEmbeddings:
    def test_meta_dim_equals_hidden_size(self, exported):
        for rec in exported["records"]:
            assert rec["meta"]["dim"] == 64
            assert len(rec["cls"]) == 64

    def test_probs_sum_to_one(self, exported):
        for rec in exported["records"]:
            assert abs(sum(rec["probs"]) - 1.0) <= 1e-5

    def test_word_alignment_covers_all_tokens(self, exported):
        for rec in exported["records"]:
            owned = sorted(i for idxs in rec["word_map"] for i in idxs)
            assert owned == list(range(len(rec["tokens"])))
            assert len(rec["words"]) == len(rec["word_map"])

    def test_layers_present_with_all(self, exported):
        for rec in exported["records"]:
            assert set(rec["layers"]) == {"1", "2"}

    def test_labels_carried_through(self, exported, checkpoint):
        by_id = {rec["id"]: rec for rec in exported["records"]}
        for src in checkpoint["corpus"][:10]:
            assert by_id[src["id"]]["label"] == src["label"]

    def test_deterministic(self, checkpoint, exported, tmp_path):
        again = tmp_path / "again.jsonl"
        export_embeddings(checkpoint["dir"], exported["corpus_path"], again, layers="all")
        assert filecmp.cmp(exported["emb_path"], again, shallow=False)


class TestExportMasked:
    def _masks_file(self, corpus, path, include_identity=True):
        rng = np.random.default_rng(0)
        with open(path, "w") as fh:
            for rec in corpus:
                n = len(rec["text"].split())
                masks = []
                if include_identity:
                    masks.append([1] * n)
                masks.append([0] * n)
                for _ in range(3):
                    masks.append([int(b) for b in rng.integers(0, 2, size=n)])
                fh.write(json.dumps({"id": rec["id"], "masks": masks}) + "\n")

    def test_record_count_and_identity_mask(self, checkpoint, exported, tmp_path):
        masks_path = tmp_path / "masks.jsonl"
        self._masks_file(checkpoint["corpus"][:10], masks_path)
        preds_path = tmp_path / "preds.jsonl"
        n = export_masked_predictions(checkpoint["dir"], exported["corpus_path"],
                                      masks_path, preds_path)
        assert n == 10 * 5
        by_id = {rec["id"]: rec for rec in exported["records"]}
        identity_checked = 0
        for line in open(preds_path):
            rec = json.loads(line)
            assert abs(sum(rec["probs"]) - 1.0) <= 1e-5
            if all(v == 1 for v in rec["mask"]):
                np.testing.assert_allclose(rec["probs"], by_id[rec["id"]]["probs"],
                                           atol=1e-5)
                identity_checked += 1
        assert identity_checked == 10

    def test_deterministic(self, checkpoint, exported, tmp_path):
        masks_path = tmp_path / "masks.jsonl"
        self._masks_file(checkpoint["corpus"][:5], masks_path)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        export_masked_predictions(checkpoint["dir"], exported["corpus_path"], masks_path, a)
        export_masked_predictions(checkpoint["dir"], exported["corpus_path"], masks_path, b)
        assert filecmp.cmp(a, b, shallow=False)

    def test_mask_substitution_mode(self, checkpoint, exported, tmp_path):
        masks_path = tmp_path / "masks.jsonl"
        self._masks_file(checkpoint["corpus"][:3], masks_path)
        out = tmp_path / "preds.jsonl"
        n = export_masked_predictions(checkpoint["dir"], exported["corpus_path"],
                                      masks_path, out, mode="mask")
        assert n == 3 * 5

    def test_mask_length_mismatch_rejected(self, checkpoint, exported, tmp_path):
        masks_path = tmp_path / "masks.jsonl"
        sid = checkpoint["corpus"][0]["id"]
        masks_path.write_text(json.dumps({"id": sid, "masks": [[1, 1]]}) + "\n")
        with pytest.raises(ValueError, match="mask length"):
            export_masked_predictions(checkpoint["dir"], exported["corpus_path"],
                                      masks_path, tmp_path / "out.jsonl")
