"""Fitting engine: scoring pieces, initialization, and full fits vs oracles."""

import numpy as np
import pytest
from scipy import optimize

import devmf
from devmf.engine import (DataMatrix, DegenerateWeightError, DivergenceError,
                          InitError, ModelSpec, UnderdeterminedError, _cycle,
                          _initial_eta, dmf_fit, initialize, variance_weights,
                          wls_solve, working_response)
from devmf.families import DomainError, get_family, get_link


def gaussian_spec(rank, **kw):
    return ModelSpec(get_family("gaussian"), get_link("identity"), rank, **kw)


class TestWorkingResponse:
    def test_identity_link_returns_data(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 3))
        eta = rng.normal(size=(4, 3))
        z = working_response(x, eta, eta, get_link("identity"))
        assert np.allclose(z, x, atol=1e-15)

    def test_log_link_value(self):
        z = working_response(np.array(2.0), np.array(0.0), np.array(1.0),
                             get_link("log"))
        assert float(z) == pytest.approx(1.0)

    def test_logit_link_value(self):
        z = working_response(np.array(1.0), np.array(0.0), np.array(0.5),
                             get_link("logit"))
        assert float(z) == pytest.approx(2.0)

    def test_degenerate_derivative_raises(self):
        with pytest.raises(DegenerateWeightError) as err:
            working_response(np.array([[1.0]]), np.array([[-60.0]]),
                             np.array([[1e-30]]), get_link("log"))
        assert err.value.index == (0, 0)


class TestVarianceWeights:
    def test_gaussian_identity_all_ones(self):
        w = np.ones((3, 2))
        eta = np.zeros((3, 2))
        s = variance_weights(w, eta, eta, get_family("gaussian"), get_link("identity"))
        assert np.allclose(s, 1.0)

    def test_poisson_log_scales_with_weight(self):
        s = variance_weights(np.array([[2.0]]), np.array([[0.0]]), np.array([[1.0]]),
                             get_family("poisson"), get_link("log"))
        assert s[0, 0] == pytest.approx(2.0)

    def test_bernoulli_logit_quarter(self):
        s = variance_weights(np.array([[1.0]]), np.array([[0.0]]), np.array([[0.5]]),
                             get_family("bernoulli"), get_link("logit"))
        assert s[0, 0] == pytest.approx(0.25)

    def test_exact_zero_where_weight_zero(self):
        w = np.array([[1.0, 0.0]])
        eta = np.array([[0.0, 0.3]])
        s = variance_weights(w, eta, np.exp(eta), get_family("poisson"), get_link("log"))
        assert s[0, 1] == 0.0


class TestWlsSolve:
    def test_identity_design_returns_response(self):
        design = np.eye(4)
        resp = np.array([1.0, -2.0, 3.0, 0.5])
        coef = wls_solve(design, resp, np.ones(4))
        assert np.allclose(coef, resp, atol=1e-12)

    def test_matches_qr_oracle(self):
        rng = np.random.default_rng(1)
        design = rng.normal(size=(20, 3))
        resp = rng.normal(size=20)
        coef = wls_solve(design, resp, np.ones(20))
        want, *_ = np.linalg.lstsq(design, resp, rcond=None)
        assert np.max(np.abs(coef - want)) < 1e-10

    def test_underdetermined_rejected(self):
        design = np.ones((5, 3))
        w = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        with pytest.raises(UnderdeterminedError):
            wls_solve(design, np.ones(5), w)


class TestInitialize:
    def test_poisson_zero_entry(self):
        x = np.zeros((3, 3))
        eta0 = _initial_eta(x, np.ones_like(x), get_family("poisson"), get_link("log"))
        assert np.allclose(eta0, np.log(0.1))

    def test_gaussian_identity_passthrough(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 4))
        v0 = initialize(x, None, get_family("gaussian"), get_link("identity"), 2)
        assert np.allclose(v0, x.T[:, :2])

    def test_bernoulli_shrinkage(self):
        x = np.array([[1.0]])
        fam = get_family("bernoulli")
        eta0 = _initial_eta(x, np.ones_like(x), fam, get_link("logit"))
        assert np.allclose(fam.canonical_link().m(eta0), 0.75)

    def test_zero_weight_entries_take_column_mean(self):
        x = np.array([[1.0, 5.0], [3.0, 999.0]])
        w = np.array([[1.0, 1.0], [1.0, 0.0]])
        eta0 = _initial_eta(x, w, get_family("gaussian"), get_link("identity"))
        assert eta0[1, 1] == 5.0  # column mean over observed entries

    def test_all_holdout_column_rejected(self):
        x = np.ones((3, 2))
        w = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(InitError, match="column 1"):
            initialize(x, w, get_family("gaussian"), get_link("identity"), 1)


class TestDataMatrix:
    def test_weight_shape_mismatch(self):
        with pytest.raises(ValueError):
            DataMatrix(np.ones((2, 2)), np.ones((2, 3)))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            DataMatrix(np.ones((2, 2)), -np.ones((2, 2)))

    def test_row_underdetermined(self):
        w = np.ones((3, 4))
        w[1, 1:] = 0.0
        with pytest.raises(UnderdeterminedError, match="row 1"):
            DataMatrix(np.ones((3, 4)), w).validate_for_rank(2)


class TestGaussianEquivalence:
    def test_rank2_matches_truncated_svd(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 12))
        raw = dmf_fit(DataMatrix(x), gaussian_spec(2, max_iter=3000, rel_tol=1e-15))
        u, s, vt = np.linalg.svd(x)
        best = u[:, :2] * s[:2] @ vt[:2]
        rel = np.linalg.norm(raw.eta - best) / np.linalg.norm(best)
        assert rel < 1e-6

    def test_domain_violation_rejected(self):
        x = np.array([[1.0, -2.0], [3.0, 4.0]])
        with pytest.raises(DomainError):
            dmf_fit(DataMatrix(x), ModelSpec(get_family("gamma"), get_link("log"), 1))

    def test_rank_exceeding_dimensions_rejected(self):
        with pytest.raises(ValueError):
            dmf_fit(DataMatrix(np.ones((3, 2)) + np.eye(3, 2)), gaussian_spec(3))


class TestPoissonFits:
    def test_saturated_reproduces_data(self):
        rng = np.random.default_rng(4)
        x = rng.poisson(4.0, size=(9, 5)).astype(float) + 1.0
        raw = dmf_fit(DataMatrix(x), ModelSpec(get_family("poisson"), get_link("log"), 5))
        assert np.max(np.abs(raw.mu - x) / x) < 1e-6
        assert raw.converged

    def test_rank1_matches_black_box_optimizer(self):
        rng = np.random.default_rng(5)
        mu_true = np.exp(rng.normal(0.5, 0.4, size=(6, 4)))
        x = rng.poisson(mu_true).astype(float)
        fam, link = get_family("poisson"), get_link("log")
        raw = dmf_fit(DataMatrix(x), ModelSpec(fam, link, 1, max_iter=2000,
                                               rel_tol=1e-12))

        def total_dev(theta):
            eta = np.outer(theta[:6], theta[6:])
            mu = np.exp(np.clip(eta, -40, 40))
            return float(np.sum(fam.unit_deviance(x, mu)))

        best = np.inf
        orng = np.random.default_rng(99)
        for _ in range(50):
            res = optimize.minimize(total_dev, orng.normal(0, 0.7, 10),
                                    method="Nelder-Mead",
                                    options={"maxiter": 4000, "fatol": 1e-12,
                                             "xatol": 1e-10})
            best = min(best, res.fun)
        assert raw.deviance <= best + 1e-4


class TestEngineProperties:
    @pytest.mark.parametrize("family,link", [
        ("gaussian", "identity"), ("poisson", "log"), ("gamma", "log"),
        ("gamma", "inverse"), ("bernoulli", "logit"), ("negbin", "log"),
    ])
    def test_monotone_deviance(self, family, link):
        # data come from a stable generator link; the fit link is under test
        from devmf.simlab import SimDesign, NormalLaw, simulate_dmf
        gen_link = {"real": "identity", "positive": "log", "unit": "logit"}[
            get_family(family).mean_domain]
        design = SimDesign(name="t", family=family, link=gen_link, n=25, p=10, rank=2,
                           score_law=NormalLaw(0.3, 0.4), loading_law=NormalLaw(0.0, 0.4),
                           center=0.8 if family in ("poisson", "gamma", "negbin") else 0.0,
                           phi=2.0 if family in ("gamma", "negbin") else 1.0, seed=42)
        data, _, _ = simulate_dmf(design, 0)
        fam = design.make_family()
        raw = dmf_fit(data, ModelSpec(fam, get_link(link), 2, max_iter=150))
        tr = raw.deviance_trace
        assert np.all(np.diff(tr) <= tr[:-1] * 1e-8 + 1e-12)

    def test_holdout_entries_do_not_leak(self):
        rng = np.random.default_rng(7)
        x = rng.poisson(3.0, size=(20, 8)).astype(float)
        w = np.ones_like(x)
        mask_idx = rng.choice(x.size, size=16, replace=False)
        w.flat[mask_idx] = 0.0
        spec = ModelSpec(get_family("poisson"), get_link("log"), 2, max_iter=60)
        raw1 = dmf_fit(DataMatrix(x, w), spec)
        x2 = x.copy()
        x2.flat[mask_idx] = rng.poisson(40.0, size=16)  # arbitrary in-domain values
        raw2 = dmf_fit(DataMatrix(x2, w), spec)
        assert raw1.iterations == raw2.iterations
        assert np.max(np.abs(raw1.scores - raw2.scores)) < 1e-8
        assert np.max(np.abs(raw1.loadings - raw2.loadings)) < 1e-8
        assert raw1.deviance == raw2.deviance

    def test_score_equations_at_convergence(self):
        rng = np.random.default_rng(8)
        x = rng.poisson(2.0, size=(30, 10)).astype(float)
        fam, link = get_family("poisson"), get_link("log")
        raw = dmf_fit(DataMatrix(x), ModelSpec(fam, link, 2, max_iter=4000,
                                               rel_tol=1e-13))
        mu = raw.mu
        g = (x - mu) * link.m_prime(raw.eta) / fam.variance(mu)
        n, p = x.shape
        assert np.max(np.abs(g @ raw.loadings)) < 1e-4 * n * p
        assert np.max(np.abs(g.T @ raw.scores)) < 1e-4 * n * p

    def test_cycle_scale_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.poisson(2.0, size=(12, 6)).astype(float)
        w = np.ones_like(x)
        fam, link = get_family("poisson"), get_link("log")
        eta = _initial_eta(x, w, fam, link)
        v = np.ascontiguousarray(eta.T[:, :2])
        d = np.array([3.7, 0.2])
        out1 = _cycle(x, w, w > 0, eta, v, fam, link, 1e-10)[2]
        out2 = _cycle(x, w, w > 0, eta, v * d, fam, link, 1e-10)[2]
        assert np.max(np.abs(out1 - out2)) < 1e-10

    def test_deterministic_rerun(self):
        rng = np.random.default_rng(10)
        x = rng.poisson(2.0, size=(15, 6)).astype(float)
        spec = ModelSpec(get_family("poisson"), get_link("log"), 2)
        raw1 = dmf_fit(DataMatrix(x), spec)
        raw2 = dmf_fit(DataMatrix(x), spec)
        assert np.array_equal(raw1.scores, raw2.scores)
        assert np.array_equal(raw1.deviance_trace, raw2.deviance_trace)

    def test_zero_deviance_counts_as_converged(self):
        x = np.outer([1.0, 2.0, 3.0], [2.0, 1.0, 4.0])
        raw = dmf_fit(DataMatrix(x), gaussian_spec(1))
        assert raw.converged and raw.deviance < 1e-18
