"""Tests for the Poisson/NB2 likelihoods, IRLS fitting, prediction and Wald inference."""

import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import draw_counts, random_design
from intrusion_glm.countglm import (
    Family,
    FitResult,
    IRLSOptions,
    coef_inference,
    irls_fit,
    log_likelihood,
    nb2_log_pmf,
    poisson_log_pmf,
    predict,
    saturated_log_likelihood,
    unit_deviance,
    wald_test,
)
from intrusion_glm.dataset import DesignMatrix
from intrusion_glm.errors import (
    ConvergenceWarning,
    DomainError,
    SchemaError,
    SingularMatrixError,
)

mpmath.mp.dps = 40


def mp_poisson_logpmf(y, lam):
    lam = mpmath.mpf(lam)
    return float(y * mpmath.log(lam) - lam - mpmath.loggamma(y + 1))


def mp_nb2_logpmf(y, lam, gamma):
    a = 1 / mpmath.mpf(gamma)
    lam = mpmath.mpf(lam)
    return float(
        mpmath.loggamma(y + a) - mpmath.loggamma(a) - mpmath.loggamma(y + 1)
        + a * mpmath.log(a / (a + lam)) + y * mpmath.log(lam / (a + lam))
    )


def _intercept_only(m):
    return DesignMatrix.from_arrays(np.ones((m, 1)), ["intercept"])


# ------------------------------------------------------------------ #
# Family
# ------------------------------------------------------------------ #


class TestFamily:
    def test_variance(self):
        np.testing.assert_allclose(Family.poisson().variance([2.0]), [2.0])
        np.testing.assert_allclose(Family.nb2(0.5).variance([2.0]), [4.0])

    def test_weights(self):
        np.testing.assert_allclose(Family.nb2(1.0).irls_weights([1.0, 3.0]), [0.5, 0.75])

    def test_negative_gamma_rejected(self):
        with pytest.raises(DomainError):
            Family.nb2(-0.1)

    def test_extra_params(self):
        assert Family.poisson().extra_params == 0
        assert Family.nb2(0.3).extra_params == 1


# ------------------------------------------------------------------ #
# Log pmfs
# ------------------------------------------------------------------ #


class TestPoissonLogPmf:
    def test_zero_at_one(self):
        assert poisson_log_pmf(0, 1.0) == -1.0

    def test_one_at_one(self):
        assert poisson_log_pmf(1, 1.0) == pytest.approx(-1.0, abs=1e-15)

    def test_against_mpmath(self):
        assert poisson_log_pmf(5, 2.5) == pytest.approx(mp_poisson_logpmf(5, 2.5), rel=1e-14)

    @pytest.mark.parametrize("y,lam", [(10**6, 10**6), (10**6, 3.0), (0, 1e-8), (123456, 1e5)])
    def test_large_values_stable(self, y, lam):
        assert poisson_log_pmf(y, lam) == pytest.approx(mp_poisson_logpmf(y, lam), rel=1e-12)

    def test_nonpositive_lambda(self):
        with pytest.raises(DomainError):
            poisson_log_pmf(1, 0.0)


class TestNB2LogPmf:
    def test_zero_closed_form(self):
        assert nb2_log_pmf(0, 1.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_geometric(self):
        assert nb2_log_pmf(1, 1.0, 1.0) == pytest.approx(math.log(0.25), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2_000_000), st.floats(-6, 6.3), st.floats(-12, 3))
    def test_against_mpmath(self, y, log_lam, log_gamma):
        lam, gamma = 10.0**log_lam, 10.0**log_gamma
        got = nb2_log_pmf(y, lam, gamma)
        want = mp_nb2_logpmf(y, lam, gamma)
        assert abs(got - want) <= 1e-13 * max(1.0, abs(want))

    def test_large_count(self):
        y = 2_000_000
        got = nb2_log_pmf(y, 1.5e6, 0.2)
        assert got == pytest.approx(mp_nb2_logpmf(y, 1.5e6, 0.2), rel=1e-13)

    def test_poisson_limit_sweep(self):
        y = np.arange(51)
        for lam in (0.1, 1.0, 5.0, 20.0):
            np.testing.assert_allclose(
                nb2_log_pmf(y, lam, 1e-10), poisson_log_pmf(y, lam), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 20.0), st.floats(0.05, 2.0))
    def test_normalizes(self, lam, gamma):
        a = 1 / gamma
        q = gamma * lam / (1 + gamma * lam)
        Y = 50
        while True:
            r = q * max(1.0, (Y + a) / (Y + 1))
            tail = math.exp(nb2_log_pmf(Y, lam, gamma)) * r / (1 - r) if r < 1 else math.inf
            if tail < 1e-13:
                break
            Y *= 2
        total = math.fsum(np.exp(nb2_log_pmf(np.arange(Y + 1), lam, gamma)))
        assert abs(total - 1) < 1e-9

    def test_rejects_bad_parameters(self):
        with pytest.raises(DomainError):
            nb2_log_pmf(1, 1.0, 0.0)
        with pytest.raises(DomainError):
            nb2_log_pmf(1, -1.0, 0.5)
        with pytest.raises(DomainError):
            nb2_log_pmf(-1, 1.0, 0.5)


class TestUnitDeviance:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-3, 6))
    def test_poisson_closed_form(self, y, log_mu):
        mu = 10.0**log_mu
        ym = mpmath.mpf(y)
        want = 2 * ((ym * mpmath.log(ym / mu) if y else 0) - (ym - mu))
        got = unit_deviance(Family.poisson(), [y], [mu])[0]
        assert abs(got - float(want)) <= 1e-12 * max(1.0, float(want))

    def test_zero_at_saturation(self):
        np.testing.assert_array_equal(
            unit_deviance(Family.nb2(0.5), [0, 3, 10**6], [0.0, 3.0, 1e6]), 0.0)


class TestLogLikelihood:
    def test_single_term(self):
        assert log_likelihood(Family.poisson(), [0], [1.0]) == -1.0

    def test_saturated_poisson(self):
        got = saturated_log_likelihood(Family.poisson(), [2])
        assert got == pytest.approx(math.log(2) - 2, abs=1e-14)

    @pytest.mark.parametrize("family", [Family.poisson(), Family.nb2(0.7)])
    def test_saturated_zero_contributes_zero(self, family):
        assert saturated_log_likelihood(family, [0, 0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            log_likelihood(Family.poisson(), [1, 2], [1.0])


# ------------------------------------------------------------------ #
# IRLS
# ------------------------------------------------------------------ #


class TestIRLS:
    def test_intercept_only_poisson(self):
        fit = irls_fit(_intercept_only(3), [1, 2, 3], Family.poisson())
        assert fit.coefficients[0] == pytest.approx(math.log(2), abs=1e-10)
        assert fit.converged

    @pytest.mark.parametrize("gamma", [0.01, 0.5, 2.0, 10.0])
    def test_intercept_only_nb2(self, gamma):
        fit = irls_fit(_intercept_only(3), [1, 2, 3], Family.nb2(gamma))
        assert fit.coefficients[0] == pytest.approx(math.log(2), abs=1e-8)

    def test_four_point_grid_oracle(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.array([1.0, 1.0, 4.0, 6.0])
        X = DesignMatrix.from_arrays(x, ["x"], add_intercept=True)
        fit = irls_fit(X, y, Family.poisson())

        def ll(b0, b1):
            eta = b0[..., None] + b1[..., None] * x
            return np.sum(y * eta - np.exp(eta), axis=-1)

        center = np.array([0.0, 0.5])
        for half, step in ((2.0, 1e-2), (2e-2, 1e-3), (2e-3, 1e-5)):
            g0 = np.arange(-half, half + step / 2, step) + center[0]
            g1 = np.arange(-half, half + step / 2, step) + center[1]
            B0, B1 = np.meshgrid(g0, g1, indexing="ij")
            k = np.unravel_index(np.argmax(ll(B0, B1)), B0.shape)
            center = np.array([B0[k], B1[k]])
        np.testing.assert_allclose(fit.coefficients, center, atol=2e-5)

    def test_fit_invariants(self, rng):
        X = random_design(rng, 60, 4)
        y = draw_counts(rng, X.values, [1.0, 0.3, -0.2, 0.1], gamma=0.4)
        fit = irls_fit(X, y, Family.nb2(0.4))
        assert np.all(fit.fitted_means > 0)
        assert fit.residual_df == 60 - 5 - 1
        assert fit.model_df == 3 and fit.n_params == 5
        np.testing.assert_allclose(fit.covariance, fit.covariance.T)
        assert np.all(np.linalg.eigvalsh(fit.covariance) > 0)
        np.testing.assert_allclose(fit.std_errors, np.sqrt(np.diag(fit.covariance)))

    @pytest.mark.parametrize("gamma", [0.0, 0.3, 1.5])
    def test_score_vanishes(self, rng, gamma):
        X = random_design(rng, 80, 3)
        y = draw_counts(rng, X.values, [0.8, 0.5, -0.4], gamma)
        family = Family.nb2(gamma) if gamma else Family.poisson()
        fit = irls_fit(X, y, family)
        h = 1e-6
        grad = np.empty(3)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            up = log_likelihood(family, y, np.exp(X.values @ (fit.coefficients + e)))
            dn = log_likelihood(family, y, np.exp(X.values @ (fit.coefficients - e)))
            grad[j] = (up - dn) / (2 * h)
        mu = fit.fitted_means
        analytic = X.values.T @ ((y - mu) / (1 + gamma * mu))
        assert np.max(np.abs(grad)) < 1e-6 * 80
        assert np.max(np.abs(analytic)) < 1e-6 * 80

    def test_covariance_is_inverse_fisher(self, rng):
        X = random_design(rng, 50, 3)
        y = draw_counts(rng, X.values, [1.0, 0.2, 0.2], 0.5)
        fit = irls_fit(X, y, Family.nb2(0.5))
        mu = fit.fitted_means
        info = X.values.T @ (X.values * (mu / (1 + 0.5 * mu))[:, None])
        np.testing.assert_allclose(fit.covariance, np.linalg.inv(info), rtol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_nb2_tiny_gamma_matches_poisson(self, seed):
        rng = np.random.default_rng(seed)
        X = random_design(rng, 40, 3)
        y = draw_counts(rng, X.values, [1.0, 0.4, -0.3])
        p = irls_fit(X, y, Family.poisson())
        q = irls_fit(X, y, Family.nb2(1e-10))
        np.testing.assert_allclose(q.coefficients, p.coefficients, atol=1e-5)

    def test_deviance_matches_definition(self, rng):
        X = random_design(rng, 45, 3)
        y = draw_counts(rng, X.values, [1.0, 0.5, 0.5], 1.0)
        fam = Family.nb2(1.0)
        fit = irls_fit(X, y, fam)
        ll_fit = sum(mp_nb2_logpmf(int(yi), mi, 1.0) for yi, mi in zip(y, fit.fitted_means))
        ll_sat = sum(mp_nb2_logpmf(int(yi), yi, 1.0) for yi in y if yi > 0)
        assert fit.deviance == pytest.approx(-2 * (ll_fit - ll_sat), abs=1e-8)

    def test_all_zero_response(self):
        # the MLE sits at -infinity; IRLS stops once the deviance is negligible
        X = random_design(np.random.default_rng(0), 10, 2)
        fit = irls_fit(X, np.zeros(10), Family.poisson())
        assert np.all(fit.fitted_means > 0)
        assert fit.deviance < 1e-6

    def test_negative_response(self):
        with pytest.raises(DomainError):
            irls_fit(_intercept_only(3), [1, -2, 3], Family.poisson())

    def test_collinear_columns_named(self, rng):
        a = rng.standard_normal(20)
        X = DesignMatrix.from_arrays(np.column_stack([a, -a]), ["a", "neg_a"], add_intercept=True)
        with pytest.raises(SingularMatrixError, match="neg_a"):
            irls_fit(X, rng.poisson(2.0, 20), Family.poisson())

    def test_non_convergence_warns(self, rng):
        X = random_design(rng, 30, 2)
        y = draw_counts(rng, X.values, [1.0, 0.5])
        with pytest.warns(ConvergenceWarning):
            fit = irls_fit(X, y, Family.poisson(), IRLSOptions(max_iter=1))
        assert not fit.converged
        with pytest.warns(ConvergenceWarning):
            coef_inference(fit)

    def test_silent_mode(self, rng):
        X = random_design(rng, 30, 2)
        y = draw_counts(rng, X.values, [1.0, 0.5])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            irls_fit(X, y, Family.poisson(), IRLSOptions(max_iter=1), warn=False)

    def test_linear_family_rejected(self):
        with pytest.raises(DomainError):
            irls_fit(_intercept_only(3), [1, 2, 3], Family.linear())

    def test_result_is_frozen(self):
        fit = irls_fit(_intercept_only(3), [1, 2, 3], Family.poisson())
        with pytest.raises(Exception):
            fit.deviance = 0.0
        with pytest.raises(ValueError):
            fit.coefficients[0] = 1.0
        assert isinstance(fit, FitResult)


# ------------------------------------------------------------------ #
# predict and Wald inference
# ------------------------------------------------------------------ #


class TestPredict:
    def test_baseline_row(self):
        fit = irls_fit(_intercept_only(3), [1, 2, 3], Family.poisson())
        assert predict(fit, [[1.0]])[0] == pytest.approx(2.0, abs=1e-10)

    def test_training_reproduces_fitted(self, rng):
        X = random_design(rng, 40, 3)
        fit = irls_fit(X, draw_counts(rng, X.values, [1.0, 0.2, 0.3]), Family.poisson())
        np.testing.assert_allclose(predict(fit, X), fit.fitted_means, rtol=1e-12)

    def test_multiplicative_effect(self):
        X = DesignMatrix.from_arrays([0.0, 1.0, 0.0, 1.0], ["x"], add_intercept=True)
        fit = irls_fit(X, [10, 12, 9, 13], Family.poisson())
        mu = predict(fit, [[1.0, 0.0], [1.0, 0.2113 / fit.coefficients[1]]])
        assert mu[1] / mu[0] == pytest.approx(1.235, abs=5e-4)

    def test_column_mismatch(self, rng):
        X = random_design(rng, 20, 2)
        fit = irls_fit(X, rng.poisson(2.0, 20), Family.poisson())
        other = DesignMatrix.from_arrays(X.values, ["intercept", "other"])
        with pytest.raises(SchemaError):
            predict(fit, other)


class TestWald:
    def test_poisson_domestic_com(self):
        _, p, _ = wald_test(2.97e-6, 1.10e-6)
        assert round(p, 3) == 0.007

    def test_nb2_domestic_com(self):
        _, p, _ = wald_test(3.01e-6, 2.06e-6)
        assert abs(p - 0.143) <= 0.002

    def test_zero_coefficient(self):
        z, p, degenerate = wald_test(0.0, 0.3)
        assert z == 0 and p == 1.0 and not degenerate

    def test_zero_se(self):
        z, p, degenerate = wald_test(0.5, 0.0)
        assert p == 0.0 and degenerate and math.isinf(z)

    def test_inference_table(self, rng):
        X = random_design(rng, 50, 3)
        fit = irls_fit(X, draw_counts(rng, X.values, [1.0, 0.3, 0.0]), Family.poisson())
        rows = coef_inference(fit)
        assert [r.name for r in rows] == list(fit.column_names)
        for r in rows:
            assert r.z == pytest.approx(r.coefficient / r.std_err)
            assert r.p_value == pytest.approx(math.erfc(abs(r.z) / math.sqrt(2)), rel=1e-12)
