"""Tests for the heterogeneity sweep, restricted-predictor cases and model ranking."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from intrusion_glm.countglm import Family, irls_fit
from intrusion_glm.dataset import CASE_EXCLUSIONS, SynthConfig, encode, simulate
from intrusion_glm.diagnostics import dispersion
from intrusion_glm.errors import DomainError
from intrusion_glm.study import (
    CASE_LABELS,
    DEFAULT_GAMMA_GRID,
    CaseReport,
    badness_score,
    compare_models,
    gamma_sweep,
    run_cases,
    significance_stars,
)

# moderate coefficients on the synthetic marginals keep responses in a realistic range
MODERATE_BETA = {"intercept": 0.8, "violations": 0.12, "seib3": 0.5, "seib10": -0.4}


@pytest.fixture(scope="module")
def records41():
    return simulate(SynthConfig(m=41, gamma=0.3, seed=1))


@pytest.fixture(scope="module")
def nb2_reports(records41):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_cases(records41, "nb2", [0.5])


class TestStars:
    @pytest.mark.parametrize("p,stars", [
        (0.0, "***"), (0.000999, "***"), (0.001, "**"), (0.0099, "**"), (0.01, "*"),
        (0.049999, "*"), (0.05, ""), (0.5, ""), (1.0, ""),
    ])
    def test_thresholds(self, p, stars):
        assert significance_stars(p) == stars

    def test_reports_consistent(self, nb2_reports):
        for r in nb2_reports:
            for c in r.coefficients:
                assert c.stars == significance_stars(c.p_value)


class TestCases:
    def test_six_reports(self, nb2_reports):
        assert [r.case_label for r in nb2_reports] == list(CASE_LABELS)

    def test_residual_dfs(self, nb2_reports):
        assert [r.residual_df for r in nb2_reports] == [25, 26, 27, 26, 26, 29]

    def test_excluded_columns(self, nb2_reports):
        for r in nb2_reports:
            assert set(r.excluded_columns) == set(CASE_EXCLUSIONS[r.case_label])
            names = {c.name for c in r.coefficients}
            assert not names & set(r.excluded_columns)

    def test_case_definitions(self):
        assert set(CASE_EXCLUSIONS["full"]) == set()
        assert set(CASE_EXCLUSIONS["case1"]) == {"violations"}
        assert set(CASE_EXCLUSIONS["case2"]) == {"seib3", "seib10"}
        assert set(CASE_EXCLUSIONS["case3"]) == {"hosts"}
        assert set(CASE_EXCLUSIONS["case4"]) == {"rosg"}
        assert set(CASE_EXCLUSIONS["case5"]) == {"hosts", "rosg", "seib3", "seib10"}

    def test_lr_tests_against_full(self, nb2_reports):
        full = nb2_reports[0]
        assert full.lr_test is None
        for r in nb2_reports[1:]:
            assert r.lr_test.df == len(r.excluded_columns)
            if r.converged and full.converged:
                assert full.log_likelihood >= r.log_likelihood - 1e-8

    def test_poisson_dfs(self, records41):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reps = run_cases(records41, Family.poisson(), with_jackknife=False)
        assert [r.residual_df for r in reps] == [26, 27, 28, 27, 27, 30]

    def test_gamma_major_order(self, records41):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reps = run_cases(records41, "nb2", [0.2, 1.0], ("full", "case4"),
                             with_jackknife=False)
        assert [(r.gamma, r.case_label) for r in reps] == [
            (0.2, "full"), (0.2, "case4"), (1.0, "full"), (1.0, "case4")]

    def test_label_note_attached(self, nb2_reports):
        by_label = {r.case_label: r for r in nb2_reports}
        assert by_label["case3"].notes and by_label["case4"].notes
        assert not by_label["full"].notes

    def test_unknown_case(self, records41):
        with pytest.raises(DomainError):
            run_cases(records41, "nb2", [0.5], ("case9",))

    def test_nb2_without_gamma(self, records41):
        with pytest.raises(DomainError):
            run_cases(records41, "nb2")

    @pytest.mark.slow
    def test_null_lr_distribution(self):
        beta = {"intercept": 0.6, "violations": 0.1, "hosts": 5e-5, "seib3": 0.4}
        passed = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for seed in range(100):
                recs = simulate(SynthConfig(m=41, true_beta=beta, gamma=0.5, seed=seed))
                reps = run_cases(recs, "nb2", [0.5], ("full", "case4"), with_jackknife=False)
                passed += reps[1].lr_test.p_value > 0.05
        assert passed >= 90


class TestSweep:
    def test_default_grid(self):
        assert DEFAULT_GAMMA_GRID == (0.01, 0.20, 0.38, 0.57, 0.76, 0.94, 1.13, 1.31, 1.50)

    def test_rows(self, records41):
        X, y = encode(records41)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rows = gamma_sweep(X, y, (0.2, 0.9))
        assert [r.gamma for r in rows] == [0.2, 0.9]
        for r in rows:
            assert r.dispersion == pytest.approx(r.deviance / r.residual_df)
            assert 0 <= r.converged_fraction <= 1

    def test_tiny_gamma_matches_poisson(self):
        recs = simulate(SynthConfig(m=60, true_beta=MODERATE_BETA, gamma=0.4, seed=3))
        X, y = encode(recs)
        X = X.select(["intercept", "violations", "seib3", "seib10"])
        (row,) = gamma_sweep(X, y, (1e-9,))
        poisson = irls_fit(X, y, Family.poisson())
        # same deviance; the DF rule gives NB2 one residual DF fewer
        assert row.deviance == pytest.approx(poisson.deviance, abs=1e-5)
        assert row.dispersion == pytest.approx(
            dispersion(poisson.deviance, poisson.residual_df - 1), abs=1e-3)

    @pytest.mark.parametrize("grid", [(), (0.5, 0.2), (0.0, 1.0), (0.3, 0.3)])
    def test_bad_grid(self, records41, grid):
        X, y = encode(records41)
        with pytest.raises(DomainError):
            gamma_sweep(X, y, grid)


class TestBadness:
    @given(st.integers(1, 10**9))
    def test_zero_bad(self, n):
        assert badness_score(0, n) == 0.0

    def test_one_of_one(self):
        assert badness_score(1, 1) == 0.0

    def test_net_row(self):
        assert badness_score(68900, 462416) == pytest.approx(1.66, abs=0.01)
        assert 68900 / 462416 == pytest.approx(0.149, abs=5e-4)

    def test_errors(self):
        with pytest.raises(DomainError):
            badness_score(5, 4)
        with pytest.raises(DomainError):
            badness_score(0, 0)

    @given(st.integers(1, 10**6), st.data())
    def test_monotone(self, n_total, data):
        a = data.draw(st.integers(1, n_total))
        b = data.draw(st.integers(a, n_total))
        assert badness_score(a, n_total) <= badness_score(b, n_total)


def _report(label, bic_mean, phi, gamma=0.5):
    return CaseReport(
        case_label=label, family=Family.nb2(gamma), log_likelihood=-90.0, deviance=phi * 25,
        pearson_chi2=30.0, residual_df=25, n_params=15, dispersion=phi, bic=-10.0,
        coefficients=(), bic_mean=bic_mean, bic_std=1.0)


class TestCompareModels:
    def test_lower_bic_first(self):
        ranked = compare_models([_report("a", -22.40, 3.0, 0.01), _report("b", -56.23, 0.82, 1.31)])
        assert [r.bic_mean for r in ranked] == [-56.23, -22.40]
        assert ranked[0].rank == 1

    def test_tie_broken_by_dispersion_then_label(self):
        ranked = compare_models([_report("x", -10.0, 1.5), _report("y", -10.0, 1.1)])
        assert [r.case_label for r in ranked] == ["y", "x"]
        ranked = compare_models([_report("case2", -10.0, 1.2), _report("case1", -10.0, 1.2)])
        assert [r.case_label for r in ranked] == ["case1", "case2"]

    def test_order_invariant(self):
        reps = [_report(f"c{i}", float(b), 1 + i / 10) for i, b in enumerate([3, -1, 2, -1, 0])]
        base = [(r.case_label, r.bic_mean) for r in compare_models(reps)]
        rng = np.random.default_rng(0)
        for _ in range(10):
            perm = rng.permutation(len(reps))
            got = [(r.case_label, r.bic_mean) for r in compare_models([reps[i] for i in perm])]
            assert got == base

    def test_nan_bic_last(self):
        ranked = compare_models([_report("a", math.nan, 1.0), _report("b", 5.0, 1.0)])
        assert ranked[-1].case_label == "a"

    def test_needs_two(self):
        with pytest.raises(DomainError):
            compare_models([_report("a", 1.0, 1.0)])
