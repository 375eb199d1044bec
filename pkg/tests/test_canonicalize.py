"""Identification and centering of fitted factors."""

import numpy as np
import pytest

import devmf
from devmf.canonicalize import (RankDeficiencyWarning, canonicalize, center,
                                center_fit, identify)
from devmf.engine import DataMatrix, ModelSpec, dmf_fit
from devmf.families import get_family, get_link


def random_orthogonal(rng, q):
    m, _ = np.linalg.qr(rng.normal(size=(q, q)))
    return m


class TestIdentify:
    def test_orthonormal_output(self):
        rng = np.random.default_rng(0)
        fit = identify(rng.normal(size=(20, 3)), rng.normal(size=(8, 3)))
        assert np.max(np.abs(fit.v.T @ fit.v - np.eye(3))) < 1e-10
        assert np.max(np.abs(fit.u.T @ fit.u - np.eye(3))) < 1e-10
        lam = fit.scores
        assert np.max(np.abs(lam.T @ lam - np.diag(fit.d**2))) < 1e-10
        assert np.all(np.diff(fit.d) <= 0)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(15, 4))
        loadings = rng.normal(size=(9, 4))
        base = identify(scores, loadings)
        for k in range(20):
            m = random_orthogonal(np.random.default_rng(100 + k), 4)
            rotated = identify(scores @ m, loadings @ m)
            assert np.max(np.abs(rotated.u - base.u)) < 1e-9
            assert np.max(np.abs(rotated.v - base.v)) < 1e-9
            assert np.max(np.abs(rotated.d - base.d)) < 1e-9

    def test_rank_one_scale(self):
        rng = np.random.default_rng(2)
        lam = rng.normal(size=(10, 1))
        v = rng.normal(size=(6, 1))
        fit = identify(lam, v)
        assert fit.d[0] == pytest.approx(np.linalg.norm(lam) * np.linalg.norm(v), rel=1e-12)

    def test_product_preserved(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(12, 3))
        loadings = rng.normal(size=(7, 3))
        fit = identify(scores, loadings)
        prod = scores @ loadings.T
        assert np.linalg.norm(fit.eta - prod) / np.linalg.norm(prod) < 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        fit = identify(rng.normal(size=(10, 2)), rng.normal(size=(5, 2)))
        again = identify(fit.scores, fit.v)
        assert np.max(np.abs(again.u - fit.u)) < 1e-12
        assert np.max(np.abs(again.v - fit.v)) < 1e-12
        assert np.max(np.abs(again.d - fit.d)) < 1e-12

    def test_gaussian_fit_matches_direct_svd(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(25, 10))
        raw = dmf_fit(DataMatrix(x), ModelSpec(get_family("gaussian"),
                                               get_link("identity"), 2,
                                               max_iter=4000, rel_tol=1e-15))
        fit = canonicalize(raw)
        u, s, vt = np.linalg.svd(x)
        for k in range(2):
            assert fit.d[k] == pytest.approx(s[k], abs=1e-6)
            assert min(np.linalg.norm(fit.v[:, k] - vt[k]),
                       np.linalg.norm(fit.v[:, k] + vt[k])) < 1e-6

    def test_rank_deficiency_warns(self):
        rng = np.random.default_rng(6)
        col = rng.normal(size=(10, 1))
        scores = np.hstack([col, col])  # rank 1 product from 2 columns
        loadings = rng.normal(size=(6, 2))
        with pytest.warns(RankDeficiencyWarning):
            identify(scores, loadings)


class TestCenter:
    def test_ones_center_recovers_column_means(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(size=(30, 3))
        loadings = rng.normal(size=(8, 3))
        cf = center(scores, loadings, np.ones((30, 1)))
        prod = scores @ loadings.T
        assert np.max(np.abs(cf.base_loadings.ravel() - prod.mean(axis=0))) < 1e-10

    def test_split_reconstruction_exact(self):
        rng = np.random.default_rng(8)
        scores = rng.normal(size=(20, 3))
        loadings = rng.normal(size=(9, 3))
        base = rng.normal(size=(20, 2))
        cf = center(scores, loadings, base)
        prod = scores @ loadings.T
        assert np.linalg.norm(cf.eta - prod) / np.linalg.norm(prod) < 1e-10

    def test_residual_orthogonal_to_base(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=(25, 4))
        loadings = rng.normal(size=(7, 4))
        base = rng.normal(size=(25, 2))
        cf = center(scores, loadings, base)
        assert np.max(np.abs(base.T @ cf.residual.scores)) < 1e-8

    def test_rank_deficient_base_rejected(self):
        col = np.ones((10, 1))
        base = np.hstack([col, col])
        with pytest.raises(ValueError):
            center(np.ones((10, 2)), np.ones((4, 2)), base)

    def test_centered_gaussian_fit_matches_pca(self):
        # a saturated identity fit reproduces the data exactly, so centering
        # it and truncating is exactly PCA of the column-centered data
        rng = np.random.default_rng(10)
        x = rng.normal(size=(40, 8)) + rng.normal(size=(1, 8)) * 3.0
        raw = dmf_fit(DataMatrix(x), ModelSpec(get_family("gaussian"),
                                               get_link("identity"), 8,
                                               max_iter=200, rel_tol=1e-15))
        cf = center_fit(raw, out_rank=2)
        xc = x - x.mean(axis=0)
        u, s, vt = np.linalg.svd(xc, full_matrices=False)
        pca_scores = u[:, :2] * s[:2]
        got = cf.residual.scores
        for k in range(2):
            assert min(np.linalg.norm(got[:, k] - pca_scores[:, k]),
                       np.linalg.norm(got[:, k] + pca_scores[:, k])) < 1e-6

    def test_out_rank_truncation(self):
        rng = np.random.default_rng(11)
        scores = rng.normal(size=(15, 4))
        loadings = rng.normal(size=(6, 4))
        cf = center(scores, loadings, np.ones((15, 1)), out_rank=2)
        assert cf.residual.rank == 2
