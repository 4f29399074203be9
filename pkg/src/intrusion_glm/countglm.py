"""Poisson and NB2 count models with a log link, fitted by IRLS.

NB2 is the gamma-Poisson mixture with mean ``mu`` and variance
``mu * (1 + gamma * mu)``. The heterogeneity ``gamma`` is a fixed
hyperparameter of the family, never estimated here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlogy

from intrusion_glm.dataset import DesignMatrix, as_design
from intrusion_glm.errors import (
    ConvergenceWarning,
    DomainError,
    SchemaError,
    SingularMatrixError,
)
from intrusion_glm.special import log_gamma, normal_two_sided_p

__all__ = [
    "CoefRow",
    "Family",
    "FitResult",
    "IRLSOptions",
    "coef_inference",
    "dependent_columns",
    "irls_fit",
    "log_gamma",
    "log_likelihood",
    "nb2_log_pmf",
    "poisson_log_pmf",
    "predict",
    "saturated_log_likelihood",
    "unit_deviance",
    "wald_test",
]

POISSON = "poisson"
NB2 = "nb2"
LINEAR = "linear"



@dataclass(frozen=True)
class Family:
    kind: str
    gamma: float = 0.0

    def __post_init__(self):
        if self.kind not in (POISSON, NB2, LINEAR):
            raise DomainError(f"unknown family kind {self.kind!r}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.kind != NB2 and self.gamma != 0:
            raise DomainError(f"{self.kind} family takes no heterogeneity parameter")

    @classmethod
    def poisson(cls) -> "Family":
        return cls(POISSON)

    @classmethod
    def nb2(cls, gamma: float) -> "Family":
        return cls(NB2, float(gamma))

    @classmethod
    def linear(cls) -> "Family":
        return cls(LINEAR)

    @property
    def extra_params(self) -> int:
        """Parameters beyond the coefficients (the heterogeneity for NB2)."""
        return 1 if self.kind == NB2 else 0

    @property
    def label(self) -> str:
        if self.kind == NB2:
            return f"nb2(gamma={self.gamma:g})"
        return self.kind

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == NB2:
            return mu * (1.0 + self.gamma * mu)
        if self.kind == POISSON:
            return mu
        return np.ones_like(mu)

    def irls_weights(self, mu):
        # log link: w = (dmu/deta)^2 / var = mu^2 / var
        mu = np.asarray(mu, dtype=float)
        if self.kind == NB2:
            return mu / (1.0 + self.gamma * mu)
        return mu


def _check_counts(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(y)) or np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError("responses must be nonnegative integers")
    return y


_LN_2PI = math.log(2 * math.pi)
_STIRLING = (1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188)


def _stirlerr(n: np.ndarray) -> np.ndarray:
    """``log Gamma(n+1) - (n+1/2) log n + n - log sqrt(2 pi)`` for ``n > 0``."""
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    small = n <= 15
    ns = n[small]
    out[small] = gammaln(ns + 1) - (ns + 0.5) * np.log(ns) + ns - 0.5 * _LN_2PI
    nl = n[~small]
    inv2 = 1.0 / (nl * nl)
    s0, s1, s2, s3, s4 = _STIRLING
    out[~small] = (s0 - (s1 - (s2 - (s3 - s4 * inv2) * inv2) * inv2) * inv2) / nl
    return out


def _bd0(x: np.ndarray, np_: np.ndarray) -> np.ndarray:
    """``x log(x/np) + np - x`` without cancellation when ``x`` is near ``np``."""
    x, np_ = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(np_, dtype=float))
    out = np.empty_like(x)
    diff = x - np_
    near = np.abs(diff) < 0.1 * (x + np_)
    far = ~near
    out[far] = xlogy(x[far], x[far] / np_[far]) + np_[far] - x[far]
    if np.any(near):
        xn, dn = x[near], diff[near]
        v = dn / (x[near] + np_[near])
        s = dn * v
        ej = 2 * xn * v
        v2 = v * v
        for j in range(1, 40):
            ej = ej * v2
            term = ej / (2 * j + 1)
            s = s + term
            if np.all(np.abs(term) <= 1e-17 * np.abs(s)):
                break
        out[near] = s
    return out


def _poisson_terms(y, mu):
    # saddle-point form: every piece stays O(log y) even for y ~ 1e6
    y, mu = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(mu, dtype=float))
    shape = y.shape
    y, mu = y.ravel(), mu.ravel()
    out = -mu.copy()
    pos = y > 0
    yp = y[pos]
    out[pos] = -_stirlerr(yp) - _bd0(yp, mu[pos]) - 0.5 * (_LN_2PI + np.log(yp))
    return out.reshape(shape)


def _nb2_terms(y, mu, gamma):
    if gamma == 0:
        return _poisson_terms(y, mu)
    y, mu = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(mu, dtype=float))
    shape = y.shape
    y, mu = y.ravel(), mu.ravel()
    out = -np.log1p(gamma * mu) / gamma
    pos = y > 0
    if np.any(pos):
        # NB2(y) = a/(a+y) * Binom(a; a+y, p) with a = 1/gamma and p = a/(a+mu),
        # the binomial term evaluated in saddle-point form.
        a = 1.0 / gamma
        yp, mp = y[pos], mu[pos]
        scale = (1 + gamma * yp) / (1 + gamma * mp)
        out[pos] = (
            -np.log1p(gamma * yp)
            + _stirlerr(a + yp) - _stirlerr(np.full_like(yp, a)) - _stirlerr(yp)
            - _bd0(a, a * scale) - _bd0(yp, mp * scale)
            - 0.5 * (_LN_2PI + np.log(yp) - np.log1p(gamma * yp))
        )
    return out.reshape(shape)


def _log_pmf_terms(family: Family, y: np.ndarray, mu: np.ndarray) -> np.ndarray:
    if family.kind == POISSON:
        return _poisson_terms(y, mu)
    if family.kind == NB2:
        return _nb2_terms(y, mu, family.gamma)
    raise DomainError("count likelihoods are defined for the poisson and nb2 families only")


def _scalar_or_array(out):
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def poisson_log_pmf(y, lam):
    """``log P(Y = y)`` for ``Y ~ Poisson(lam)``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("poisson_log_pmf requires lambda > 0")
    y = _check_counts(y)
    return _scalar_or_array(_poisson_terms(y, lam))


def nb2_log_pmf(y, lam, gamma: float):
    """``log P(Y = y)`` for NB2 with mean ``lam`` and heterogeneity ``gamma``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("nb2_log_pmf requires lambda > 0")
    if not gamma > 0:
        raise DomainError("nb2_log_pmf requires gamma > 0")
    y = _check_counts(y)
    y, lam = np.broadcast_arrays(y, lam)
    return _scalar_or_array(_nb2_terms(y, lam, float(gamma)))


def _check_means(y: np.ndarray, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != y.shape:
        raise SchemaError(f"length mismatch: {y.shape[0]} responses, {mu.shape[0]} means")
    # mu == 0 is allowed only at y == 0, where the pmf limit is 1.
    if np.any(~(mu > 0) & ~((mu == 0) & (y == 0))):
        raise DomainError("fitted means must be > 0")
    return mu


def log_likelihood(family: Family, y, mu) -> float:
    """Sum of per-observation log pmf values.

    Passing ``mu = y`` gives the saturated log-likelihood; zero
    observations then contribute 0 for both families.
    """
    y = _check_counts(np.atleast_1d(y))
    mu = _check_means(y, np.atleast_1d(mu))
    return float(np.sum(_log_pmf_terms(family, y, mu)))


def saturated_log_likelihood(family: Family, y) -> float:
    return log_likelihood(family, y, y)


def unit_deviance(family: Family, y, mu) -> np.ndarray:
    """Per-observation deviance contributions ``2 * (l_i(y_i) - l_i(mu_i))``."""
    y = _check_counts(np.atleast_1d(y))
    mu = _check_means(y, np.atleast_1d(mu))
    d = 2.0 * (_log_pmf_terms(family, y, y) - _log_pmf_terms(family, y, mu))
    # roundoff can leave tiny negatives where y == mu
    return np.maximum(d, 0.0)


@dataclass(frozen=True)
class IRLSOptions:
    tol: float = 1e-8
    max_iter: int = 100
    max_halvings: int = 20


@dataclass(frozen=True, kw_only=True)
class FitResult:
    """Immutable outcome of a single model fit.

    Degree-of-freedom bookkeeping: ``model_df`` is the
    coefficient count minus the intercept, ``n_params`` adds one for the NB2
    heterogeneity, and ``residual_df = nobs - n_params - 1``.
    """

    family: Family
    column_names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: Optional[np.ndarray]
    std_errors: Optional[np.ndarray]
    log_likelihood: float
    deviance: float
    fitted_means: np.ndarray
    response: np.ndarray
    model_df: int
    residual_df: int
    n_params: int
    nobs: int
    iterations: int = 0
    converged: bool = True
    row_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name in ("coefficients", "covariance", "std_errors", "fitted_means", "response"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def pearson_chi2(self) -> float:
        var = self.family.variance(self.fitted_means)
        return float(np.sum((self.response - self.fitted_means) ** 2 / var))

    def coefficient(self, name: str) -> float:
        try:
            return float(self.coefficients[self.column_names.index(name)])
        except ValueError:
            raise SchemaError(f"no coefficient named {name!r}") from None


def residual_df_for(nobs: int, n_coef: int, family: Family) -> int:
    return nobs - (n_coef + family.extra_params) - 1


def dependent_columns(values: np.ndarray, names, rtol: float = 1e-10) -> list[str]:
    """Names of columns that are (numerically) linear combinations of earlier ones."""
    values = np.asarray(values, dtype=float)
    norms = np.linalg.norm(values, axis=0)
    A = values / np.where(norms > 0, norms, 1.0)
    kept: list[int] = []
    dependent = []
    for j in range(A.shape[1]):
        if norms[j] == 0:
            dependent.append(names[j])
            continue
        cand = A[:, kept + [j]]
        s = np.linalg.svd(cand, compute_uv=False)
        if s[-1] > rtol * s[0]:
            kept.append(j)
        else:
            dependent.append(names[j])
    return dependent


def check_full_rank(X: DesignMatrix, rtol: float = 1e-10) -> None:
    dep = dependent_columns(X.values, X.column_names, rtol)
    if dep:
        raise SingularMatrixError("design matrix is rank deficient", dep)


def _deviance_from_saturated(family, y, mu, sat_terms):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        d = 2.0 * (sat_terms - _log_pmf_terms(family, y, mu))
    return float(np.sum(d))


def irls_fit(
    X, y, family: Family, options: IRLSOptions | None = None, *, warn: bool = True
) -> FitResult:
    """Maximum-likelihood fit of a log-link count model by IRLS.

    Starts from ``mu = y + 0.5``, solves a weighted least-squares problem per
    iteration and halves the step whenever the deviance rises. Convergence is
    declared when the relative deviance change drops below ``options.tol``.
    A fit that hits ``max_iter`` is returned with ``converged=False`` and,
    unless ``warn`` is false, a :class:`ConvergenceWarning`.
    """
    options = options or IRLSOptions()
    X = as_design(X)
    if family.kind == LINEAR:
        raise DomainError("irls_fit handles the poisson and nb2 families; use ols_fit")
    y = _check_counts(y)
    m, n = X.shape
    if y.shape != (m,):
        raise SchemaError(f"response has {y.shape[0]} entries, design has {m} rows")
    if m < n:
        raise SingularMatrixError(f"{m} observations cannot identify {n} coefficients")
    check_full_rank(X)

    norms = np.linalg.norm(X.values, axis=0)
    Xs = X.values / norms
    sat = _log_pmf_terms(family, y, y)

    beta = np.zeros(n)
    mu = y + 0.5
    eta = np.log(mu)
    dev_old = math.inf
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        w = family.irls_weights(mu)
        z = eta + (y - mu) / mu
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(Xs * sw[:, None], z * sw, rcond=None)

        with np.errstate(over="ignore"):
            eta_new = Xs @ beta_new
            mu_new = np.exp(eta_new)
        dev_new = _deviance_from_saturated(family, y, mu_new, sat)
        halvings = 0
        while (not math.isfinite(dev_new) or dev_new > dev_old * (1 + 1e-12) + 1e-12) \
                and halvings < options.max_halvings:
            beta_new = 0.5 * (beta_new + beta)
            with np.errstate(over="ignore"):
                eta_new = Xs @ beta_new
                mu_new = np.exp(eta_new)
            dev_new = _deviance_from_saturated(family, y, mu_new, sat)
            halvings += 1
        if not math.isfinite(dev_new) or dev_new > dev_old * (1 + 1e-12) + 1e-12:
            # step-halving exhausted; keep the previous iterate
            break

        rel_change = abs(dev_new - dev_old) / (abs(dev_new) + 0.1)
        beta, eta, mu, dev_old = beta_new, eta_new, mu_new, dev_new
        if rel_change < options.tol:
            converged = True
            break

    if not converged and warn:
        warnings.warn(
            f"IRLS did not converge in {it} iterations ({family.label})",
            ConvergenceWarning,
            stacklevel=2,
        )

    coef = beta / norms
    eta = X.values @ coef
    mu = np.exp(eta)

    w = family.irls_weights(mu)
    info = Xs.T @ (Xs * w[:, None])
    evals = np.linalg.eigvalsh(info)
    if not np.all(np.isfinite(evals)) or evals[0] <= 1e-13 * evals[-1]:
        dep = dependent_columns(X.values * np.sqrt(w)[:, None], X.column_names, 1e-7)
        raise SingularMatrixError("information matrix is singular", dep)
    cov = np.linalg.inv(info) / np.outer(norms, norms)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.diag(cov))

    ll = float(np.sum(_log_pmf_terms(family, y, mu)))
    dev = float(np.sum(2.0 * (sat - _log_pmf_terms(family, y, mu))))
    return FitResult(
        family=family,
        column_names=X.column_names,
        coefficients=coef,
        covariance=cov,
        std_errors=se,
        log_likelihood=ll,
        deviance=dev,
        fitted_means=mu,
        response=y,
        model_df=n - 1,
        residual_df=residual_df_for(m, n, family),
        n_params=n + family.extra_params,
        nobs=m,
        iterations=it,
        converged=converged,
        row_ids=X.row_ids,
    )


def predict(fit: FitResult, X_new) -> np.ndarray:
    """Mean response ``exp(X_new . beta)`` for new rows."""
    if isinstance(X_new, DesignMatrix):
        if X_new.column_names != fit.column_names:
            raise SchemaError(
                f"columns {X_new.column_names} do not match fitted columns {fit.column_names}"
            )
        values = X_new.values
    else:
        values = np.atleast_2d(np.asarray(X_new, dtype=float))
        if values.shape[1] != len(fit.column_names):
            raise SchemaError(
                f"expected {len(fit.column_names)} columns, got {values.shape[1]}"
            )
    eta = values @ fit.coefficients
    if fit.family.kind == LINEAR:
        return eta
    return np.exp(eta)


@dataclass(frozen=True)
class CoefRow:
    name: str
    coefficient: float
    std_err: float
    z: float
    p_value: float
    degenerate: bool = False


def wald_test(coef: float, se: float) -> tuple[float, float, bool]:
    """Return ``(z, two-sided p, degenerate)`` for one coefficient."""
    if se < 0 or math.isnan(se):
        raise DomainError(f"standard error must be >= 0, got {se}")
    if se == 0:
        z = math.copysign(math.inf, coef) if coef != 0 else math.nan
        return z, 0.0, True
    z = coef / se
    return z, normal_two_sided_p(z), False


def coef_inference(fit: FitResult) -> list[CoefRow]:
    """Wald z statistics and two-sided normal p-values for every coefficient."""
    if fit.std_errors is None:
        raise DomainError(f"{fit.family.kind} fits carry no standard errors")
    if not fit.converged:
        warnings.warn("inference on a fit that did not converge", ConvergenceWarning,
                      stacklevel=2)
    rows = []
    for name, b, se in zip(fit.column_names, fit.coefficients, fit.std_errors):
        z, p, degenerate = wald_test(float(b), float(se))
        rows.append(CoefRow(name, float(b), float(se), z, p, degenerate))
    return rows
