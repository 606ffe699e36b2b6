import numpy as np
import pytest
import scipy.sparse as sp

from trialrank.errors import ValidationError
from trialrank.pca import PcaModel, fit_pca, inverse_transform, project, transform_pca
from trialrank.text import FeatureMatrix


def _fm(X, weighting="tfidf"):
    return FeatureMatrix(tuple(f"d{i}" for i in range(X.shape[0])), X, weighting=weighting, vocab_hash="h")


class TestFitPca:
    def test_rank_two_reconstruction(self):
        rng = np.random.default_rng(0)
        basis = rng.normal(size=(2, 5))
        X = rng.normal(size=(3, 2)) @ basis
        model = fit_pca(X, 2)
        err = np.abs(inverse_transform(model, project(model, X)) - X).max()
        assert err <= 1e-8

    def test_full_rank_explains_total_variance(self):
        X = np.random.default_rng(1).normal(size=(12, 4))
        model = fit_pca(X, 4)
        assert abs(model.explained_variance.sum() - X.var(axis=0, ddof=1).sum()) <= 1e-8

    def test_axis_aligned_components(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(4000, 3)) * np.array([5.0, 2.0, 0.5])
        model = fit_pca(X, 3)
        for i, axis in enumerate(np.eye(3)):
            assert abs(model.components[i] @ axis) >= 0.999

    def test_variance_matches_eigendecomposition(self):
        X = np.random.default_rng(3).normal(size=(30, 6)) @ np.diag([3, 2, 1, 1, 0.5, 0.1])
        model = fit_pca(X, 3)
        evals = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
        np.testing.assert_allclose(model.explained_variance, evals[:3], atol=1e-6)
        np.testing.assert_allclose(project(model, X).var(axis=0, ddof=1), model.explained_variance, atol=1e-6)

    def test_model_invariants(self):
        X = np.random.default_rng(4).random((20, 8))
        model = fit_pca(X, 5)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(5), atol=1e-6)
        ev = model.explained_variance
        assert np.all(ev >= 0) and np.all(np.diff(ev) <= 1e-12)

    def test_k_out_of_range(self):
        X = np.ones((3, 5))
        with pytest.raises(ValidationError, match="out of range"):
            fit_pca(X, 4)
        with pytest.raises(ValidationError):
            fit_pca(X, 0)

    def test_binary_features_rejected(self):
        with pytest.raises(ValidationError, match="tf-idf or frequency"):
            fit_pca(_fm(np.eye(3), "binary"), 1)

    def test_sparse_arpack_matches_dense(self):
        rng = np.random.default_rng(5)
        X = sp.random(60, 40, density=0.2, random_state=5, format="csr") * 3
        dense = fit_pca(_fm(X), 4, solver="dense")
        iterative = fit_pca(_fm(X), 4, solver="arpack", seed=1)
        np.testing.assert_allclose(dense.explained_variance, iterative.explained_variance, rtol=1e-8)
        np.testing.assert_allclose(np.abs(dense.components @ iterative.components.T), np.eye(4), atol=1e-6)
        del rng

    def test_deterministic(self):
        X = sp.random(50, 30, density=0.3, random_state=1, format="csr")
        a = fit_pca(_fm(X), 3, solver="arpack", seed=9)
        b = fit_pca(_fm(X), 3, solver="arpack", seed=9)
        assert np.array_equal(a.components, b.components)


class TestTransform:
    def test_reconstruction_error_bound(self):
        X = np.random.default_rng(6).normal(size=(25, 6))
        model = fit_pca(X, 3)
        full = fit_pca(X, 6)
        resid = ((inverse_transform(model, project(model, X)) - X) ** 2).sum()
        bound = (X.shape[0] - 1) * full.explained_variance[3:].sum()
        assert resid == pytest.approx(bound, rel=1e-8)

    def test_zero_vector(self):
        X = np.random.default_rng(7).random((10, 4)) + 1
        model = fit_pca(X, 2)
        np.testing.assert_allclose(project(model, np.zeros((1, 4)))[0], -model.mean @ model.components.T)

    def test_single_row_by_hand(self):
        model = PcaModel(np.array([[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]]), np.array([1.0, 1.0, 1.0]), np.array([2.0, 1.0]))
        # (x - mean) = (2, 1, -1): first component 2, second 0.6 - 0.8 = -0.2
        np.testing.assert_allclose(project(model, np.array([[3.0, 2.0, 0.0]])), [[2.0, -0.2]])

    def test_dimension_mismatch(self):
        model = fit_pca(np.random.default_rng(8).random((6, 4)), 2)
        with pytest.raises(ValidationError, match="dimension"):
            project(model, np.zeros((1, 5)))

    def test_feature_matrix_in_and_out(self, tmp_path):
        X = sp.random(15, 9, density=0.4, random_state=2, format="csr")
        fm = _fm(X)
        model = fit_pca(fm, 3)
        out = transform_pca(model, fm)
        assert out.axis == "pca-component" and out.rows == fm.rows and out.vocab_hash == "h"
        assert out.shape == (15, 3)
        model.save(tmp_path / "m.trc")
        again = PcaModel.load(tmp_path / "m.trc")
        assert np.array_equal(again.components, model.components) and again.k == 3
