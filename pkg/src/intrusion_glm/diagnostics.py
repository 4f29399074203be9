"""Goodness-of-fit measures for fitted count models.

Residuals, Pearson chi-square, deviance, the deviance-per-DF dispersion
estimate, the deviance-based BIC and likelihood-ratio tests. All logs are
natural logs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from intrusion_glm.countglm import NB2, POISSON, Family, FitResult, unit_deviance
from intrusion_glm.errors import DomainError, NestingError, NonNestedWarning, SchemaError
from intrusion_glm.special import chi2_sf, normal_two_sided_p

__all__ = [
    "DevianceResult",
    "DiagnosticsReport",
    "LRTestResult",
    "bic",
    "chi2_sf",
    "deviance",
    "deviance_residuals",
    "diagnose",
    "dispersion",
    "lr_test",
    "normal_two_sided_p",
    "pearson_residuals",
    "standardized_deviance_residuals",
]


def pearson_residuals(y, mu, family: Family) -> np.ndarray:
    """``(y - mu) / sqrt(var(mu))`` with the family's variance function."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise SchemaError(f"length mismatch: {y.shape} vs {mu.shape}")
    if np.any(~(mu > 0)):
        raise DomainError("fitted means must be > 0")
    return (y - mu) / np.sqrt(family.variance(mu))


class DevianceResult(NamedTuple):
    total: float
    contributions: np.ndarray


def deviance(family: Family, y, mu) -> DevianceResult:
    """Deviance ``-2 (L(mu) - L(y))`` and its per-observation contributions."""
    contrib = unit_deviance(family, y, mu)
    return DevianceResult(float(np.sum(contrib)), contrib)


def deviance_residuals(family: Family, y, mu) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    contrib = unit_deviance(family, y, mu)
    return np.sign(y - np.asarray(mu, dtype=float)) * np.sqrt(contrib)


def _standardize(d: np.ndarray, phi: float) -> np.ndarray:
    if phi > 0:
        return d / math.sqrt(phi)
    if phi == 0:
        return d  # zero deviance means every residual is already 0
    return np.full_like(d, math.nan)


def standardized_deviance_residuals(family: Family, y, mu, phi: float) -> np.ndarray:
    """Deviance residuals divided by ``sqrt(phi)``."""
    return _standardize(deviance_residuals(family, y, mu), phi)


def dispersion(deviance: float, residual_df: int) -> float:
    """Deviance per residual degree of freedom; values above 1 flag overdispersion."""
    if residual_df < 1:
        raise DomainError(f"dispersion needs residual_df >= 1, got {residual_df}")
    return deviance / residual_df


def bic(deviance: float, residual_df: int, m: int) -> float:
    """Deviance-based BIC: ``D - DF * ln(m)``."""
    if m < 1:
        raise DomainError(f"bic needs m >= 1, got {m}")
    return deviance - residual_df * math.log(m)


@dataclass(frozen=True)
class DiagnosticsReport:
    pearson_residuals: np.ndarray
    deviance_residuals: np.ndarray
    standardized_deviance_residuals: np.ndarray
    pearson_chi2: float
    deviance: float
    dispersion: float
    bic: float
    outlier_indices: np.ndarray
    outlier_threshold: float = 2.0

    @property
    def overdispersed(self) -> bool:
        return bool(self.dispersion > 1)

    @property
    def near_zero_fraction(self) -> float:
        """Share of standardized deviance residuals with ``|d| < 1``."""
        d = self.standardized_deviance_residuals
        return float(np.mean(np.abs(d) < 1)) if d.size else math.nan


def diagnose(fit: FitResult, outlier_threshold: float = 2.0) -> DiagnosticsReport:
    y, mu = fit.response, fit.fitted_means
    p = pearson_residuals(y, mu, fit.family)
    dev = deviance(fit.family, y, mu)
    d = np.sign(y - mu) * np.sqrt(dev.contributions)
    phi = dispersion(dev.total, fit.residual_df) if fit.residual_df >= 1 else math.nan
    std_d = _standardize(d, phi)
    return DiagnosticsReport(
        pearson_residuals=p,
        deviance_residuals=d,
        standardized_deviance_residuals=std_d,
        pearson_chi2=float(np.sum(p**2)),
        deviance=dev.total,
        dispersion=phi,
        bic=bic(dev.total, fit.residual_df, fit.nobs),
        outlier_indices=np.flatnonzero(np.abs(p) > outlier_threshold),
        outlier_threshold=outlier_threshold,
    )


@dataclass(frozen=True)
class LRTestResult:
    statistic: float
    df: int
    p_value: float
    non_nested: bool = False


def _check_nesting(full: FitResult, restricted: FitResult) -> None:
    if full.nobs != restricted.nobs or not np.array_equal(full.response, restricted.response):
        raise NestingError("likelihood-ratio test needs fits on the same observations")
    same_family = (full.family == restricted.family)
    poisson_in_nb2 = (full.family.kind == NB2 and restricted.family.kind == POISSON)
    if not (same_family or poisson_in_nb2):
        raise NestingError(
            f"{restricted.family.label} is not nested in {full.family.label}"
        )
    extra = set(restricted.column_names) - set(full.column_names)
    if extra:
        raise NestingError(
            f"restricted model has columns absent from the full model: {', '.join(sorted(extra))}"
        )


def lr_test(full: FitResult, restricted: FitResult) -> LRTestResult:
    """Likelihood-ratio test of ``restricted`` against the larger ``full`` model.

    A negative statistic means the data do not support the nesting; it is
    reported with ``p = 1`` and a :class:`NonNestedWarning`.
    """
    _check_nesting(full, restricted)
    df = full.n_params - restricted.n_params
    stat = 2.0 * (full.log_likelihood - restricted.log_likelihood)
    if stat < 0:
        warnings.warn(
            f"negative likelihood-ratio statistic {stat:.6g}; models behave as non-nested",
            NonNestedWarning,
            stacklevel=2,
        )
        return LRTestResult(stat, df, 1.0, non_nested=True)
    if df == 0:
        return LRTestResult(stat, 0, 1.0)
    return LRTestResult(stat, df, chi2_sf(stat, df))
