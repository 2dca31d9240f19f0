import numpy as np
import pytest

from plex.classifier import HeadParams
from plex.encoder import ToyEncoderParams, tokenize
from plex.errors import DataFormatError
from plex.explainers import (
    ImportanceVector,
    SentenceMaskModel,
    TableMaskModel,
    exact_shapley_raw_scores,
    lime_masks,
    lime_raw_scores,
    load_scores,
    normalize_scores,
    rank_by_magnitude,
    save_scores,
    shap_masks,
    shap_raw_scores,
    shapley_kernel_weight,
)


class FnModel:
    """Synthetic black box: a scalar function of the keep-mask."""

    def __init__(self, n_words, fn):
        self.n_words = n_words
        self.fn = fn

    def probs(self, mask):
        p = float(self.fn(np.asarray(mask, dtype=np.float64)))
        return np.array([1.0 - p, p])


def _fx(model):
    return float(model.probs(np.ones(model.n_words, dtype=np.uint8))[1])


class TestNormalize:
    def test_direct_rule(self):
        np.testing.assert_allclose(normalize_scores([0.2, -0.4]), [0.5, -1.0], atol=1e-15)

    def test_zero_passthrough(self):
        np.testing.assert_array_equal(normalize_scores([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])

    def test_ranking_and_signs_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            raw = rng.normal(size=rng.integers(1, 12))
            normed = normalize_scores(raw)
            np.testing.assert_array_equal(np.sign(normed), np.sign(raw))
            assert rank_by_magnitude(normed) == rank_by_magnitude(raw)
            assert np.max(np.abs(normed)) <= 1.0


class TestRanking:
    def test_ties_resolve_to_lower_index(self):
        assert rank_by_magnitude(np.array([0.5, -0.5, 0.5])) == [0, 1, 2]

    def test_magnitude_ordering(self):
        assert rank_by_magnitude(np.array([0.1, -0.9, 0.4])) == [1, 2, 0]


class TestMaskSampling:
    def test_lime_masks_exhaustive_when_budget_allows(self):
        masks = lime_masks(3, 50, seed=0)
        assert masks.shape == (7, 3)  # all non-empty subsets
        assert {tuple(m) for m in masks} == {tuple(m) for m in np.ndindex(2, 2, 2) if any(m)}

    def test_lime_masks_never_empty_and_include_full(self):
        masks = lime_masks(10, 64, seed=1)
        assert masks.shape == (64, 10)
        assert masks.sum(axis=1).min() >= 1
        assert (masks[0] == 1).all()

    def test_shap_masks_start_with_empty_and_stay_interior(self):
        masks = shap_masks(10, 64, seed=2)
        assert (masks[0] == 0).all()
        sizes = masks[1:].sum(axis=1)
        assert sizes.min() >= 1 and sizes.max() <= 9

    def test_shap_masks_exhaustive(self):
        masks = shap_masks(4, 64, seed=3)
        assert masks.shape == (15, 4)  # empty + all 14 interior coalitions


class TestShapleyKernel:
    def test_closed_form_size_one(self):
        assert shapley_kernel_weight(4, 1) == pytest.approx(3 / (4 * 1 * 3), abs=1e-15)
        assert shapley_kernel_weight(4, 1) == pytest.approx(0.25, abs=1e-15)

    def test_closed_form_size_two(self):
        assert shapley_kernel_weight(4, 2) == pytest.approx(3 / (6 * 2 * 2), abs=1e-15)
        assert shapley_kernel_weight(4, 2) == pytest.approx(0.125, abs=1e-15)

    def test_boundary_sizes_rejected(self):
        with pytest.raises(ValueError):
            shapley_kernel_weight(4, 0)
        with pytest.raises(ValueError):
            shapley_kernel_weight(4, 4)


class TestLime:
    def test_single_feature_recovered_exactly(self):
        # Full enumeration with lambda -> 0 solves the regression exactly.
        model = FnModel(5, lambda m: 0.1 + 0.6 * m[2])
        raw = lime_raw_scores(model, target=1, n_samples=2**5, seed=0, ridge_lambda=0.0)
        assert int(np.argmax(np.abs(raw))) == 2
        assert raw[2] == pytest.approx(0.6, abs=1e-6)
        others = np.delete(raw, 2)
        assert np.max(np.abs(others)) < 1e-6

    def test_constant_model_gives_zero(self):
        model = FnModel(4, lambda m: 0.3)
        raw = lime_raw_scores(model, target=1, n_samples=2**4, seed=0, ridge_lambda=0.0)
        assert np.max(np.abs(raw)) < 1e-9

    def test_additive_model_recovery(self):
        rng = np.random.default_rng(4)
        coef = rng.uniform(-0.05, 0.05, size=8)
        model = FnModel(8, lambda m, c=coef: 0.5 + float(c @ m))
        raw = lime_raw_scores(model, target=1, n_samples=2**8, seed=0, ridge_lambda=0.0)
        np.testing.assert_allclose(raw, coef, atol=1e-6)

    def test_two_seeds_different_raw_same_top1(self):
        model = FnModel(12, lambda m: 0.1 + 0.6 * m[2])
        raw_a = lime_raw_scores(model, target=1, n_samples=40, seed=1)
        raw_b = lime_raw_scores(model, target=1, n_samples=40, seed=2)
        assert not np.allclose(raw_a, raw_b)
        assert int(np.argmax(np.abs(raw_a))) == 2
        assert int(np.argmax(np.abs(raw_b))) == 2

    def test_single_word_short_circuit(self):
        up = FnModel(1, lambda m: 0.2 + 0.5 * m[0])
        assert lime_raw_scores(up, target=1, n_samples=16, seed=0).tolist() == [1.0]
        down = FnModel(1, lambda m: 0.9 - 0.5 * m[0])
        assert lime_raw_scores(down, target=1, n_samples=16, seed=0).tolist() == [-1.0]

    def test_budget_precondition(self):
        model = FnModel(30, lambda m: 0.5)
        with pytest.raises(ValueError):
            lime_raw_scores(model, target=1, n_samples=10, seed=0)


class TestShap:
    def test_dummy_player_property(self):
        model = FnModel(6, lambda m: 0.2 + 0.5 * m[3])
        raw = shap_raw_scores(model, target=1, fx=_fx(model), n_samples=2**6, seed=0)
        assert raw[3] == pytest.approx(0.5, abs=1e-6)
        assert np.max(np.abs(np.delete(raw, 3))) < 1e-6

    def test_efficiency_exact_by_construction(self):
        rng = np.random.default_rng(5)
        coef = rng.uniform(-0.04, 0.04, size=12)
        model = FnModel(12, lambda m, c=coef: 0.5 + float(c @ m) + 0.02 * float(m[0] * m[1]))
        fx = _fx(model)
        f0 = float(model.probs(np.zeros(12, dtype=np.uint8))[1])
        raw = shap_raw_scores(model, target=1, fx=fx, n_samples=30, seed=0)
        assert raw.sum() == pytest.approx(fx - f0, abs=1e-12)

    def test_matches_exact_oracle_under_full_enumeration(self):
        rng = np.random.default_rng(6)
        coef = rng.uniform(-0.04, 0.04, size=8)

        def fn(m, c=coef):
            return 0.5 + float(c @ m) + 0.03 * float(m[1] * m[4]) - 0.02 * float(m[2] * m[3] * m[6])

        model = FnModel(8, fn)
        sampled = shap_raw_scores(model, target=1, fx=_fx(model), n_samples=2**8, seed=0)
        exact = exact_shapley_raw_scores(model, target=1)
        np.testing.assert_allclose(sampled, exact, atol=1e-6)

    def test_budget_precondition(self):
        model = FnModel(8, lambda m: 0.5)
        with pytest.raises(ValueError):
            shap_raw_scores(model, target=1, fx=0.5, n_samples=10, seed=0)


class TestExactShapley:
    def test_symmetry_axiom(self):
        # Words 1 and 3 are interchangeable indicators.
        model = FnModel(5, lambda m: 0.2 + 0.3 * (m[1] + m[3]) / 2.0)
        phi = exact_shapley_raw_scores(model, target=1)
        assert phi[1] == pytest.approx(phi[3], abs=1e-12)

    def test_efficiency_axiom(self):
        rng = np.random.default_rng(7)
        coef = rng.uniform(-0.05, 0.05, size=7)
        model = FnModel(7, lambda m, c=coef: 0.5 + float(c @ m) + 0.03 * float(m[0] * m[5]))
        phi = exact_shapley_raw_scores(model, target=1)
        fx = _fx(model)
        f0 = float(model.probs(np.zeros(7, dtype=np.uint8))[1])
        assert phi.sum() == pytest.approx(fx - f0, abs=1e-12)

    def test_word_budget(self):
        model = FnModel(13, lambda m: 0.5)
        with pytest.raises(ValueError):
            exact_shapley_raw_scores(model, target=1)


class TestEndToEndToyPipeline:
    def test_exhaustive_shap_equals_exact_through_encoder(self):
        enc = ToyEncoderParams(seed=3)
        sentence = tokenize("one two three four five six", sid="s")
        head = HeadParams(weight=np.random.default_rng(8).normal(size=(2, 32)), bias=np.zeros(2))
        model = SentenceMaskModel(sentence, enc, head)
        fx = float(model.probs(np.ones(6, dtype=np.uint8))[1])
        sampled = shap_raw_scores(model, target=1, fx=fx, n_samples=2**6, seed=0)
        exact = exact_shapley_raw_scores(model, target=1)
        np.testing.assert_allclose(sampled, exact, atol=1e-6)


class TestTableModel:
    def test_lookup_and_missing_mask(self):
        records = [(np.array([1, 1]), np.array([0.3, 0.7])), (np.array([0, 0]), np.array([0.5, 0.5]))]
        model = TableMaskModel.from_records(2, records)
        np.testing.assert_array_equal(model.probs(np.array([1, 1])), [0.3, 0.7])
        with pytest.raises(DataFormatError):
            model.probs(np.array([1, 0]))


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        vectors = [
            ImportanceVector(sid="a", scores=np.array([0.5, -1.0]), target_class=1, method="lime"),
            ImportanceVector(sid="b", scores=np.array([0.0]), target_class=0, method="plex"),
        ]
        path = tmp_path / "scores.jsonl"
        save_scores(vectors, path)
        loaded = load_scores(path)
        assert [iv.sid for iv in loaded] == ["a", "b"]
        np.testing.assert_array_equal(loaded[0].scores, vectors[0].scores)
        assert loaded[0].method == "lime"
        assert loaded[1].target_class == 0

    def test_scores_outside_range_rejected(self):
        with pytest.raises(ValueError):
            ImportanceVector(sid="x", scores=np.array([1.5]), target_class=0, method="lime")
