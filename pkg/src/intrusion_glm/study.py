"""Experiment drivers: heterogeneity sweeps, restricted-predictor cases, model ranking."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from intrusion_glm.countglm import (
    NB2,
    POISSON,
    Family,
    FitResult,
    IRLSOptions,
    coef_inference,
    irls_fit,
)
from intrusion_glm.dataset import (
    CASE_DESCRIPTIONS,
    CASE_EXCLUSIONS,
    OrgRecord,
    PredictorSchema,
    as_design,
    encode,
)
from intrusion_glm.diagnostics import LRTestResult, diagnose, dispersion, lr_test
from intrusion_glm.errors import DomainError, NonNestedWarning
from intrusion_glm.validation import jackknife

DEFAULT_GAMMA_GRID = (0.01, 0.20, 0.38, 0.57, 0.76, 0.94, 1.13, 1.31, 1.50)

CASE_LABELS = tuple(CASE_EXCLUSIONS)

CASE_LABEL_NOTE = (
    "case3 omits hosts and case4 omits rosg; some summaries of this study "
    "print those two labels the other way round"
)


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    dispersion: float
    bic_mean: float
    bic_std: float
    converged_fraction: float
    deviance: float
    residual_df: int


def _dispersion_or_nan(fit: FitResult) -> float:
    return dispersion(fit.deviance, fit.residual_df) if fit.residual_df >= 1 else math.nan


def gamma_sweep(
    X,
    y,
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    options: IRLSOptions | None = None,
    n_jobs: int = 1,
) -> list[SweepRow]:
    """Jackknifed NB2 evaluation at each heterogeneity value in ``grid``.

    ``dispersion`` is the full-sample deviance per residual DF; the BIC
    columns summarize the per-fold BICs.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise DomainError("gamma grid is empty")
    if any(not g > 0 for g in grid):
        raise DomainError("gamma grid values must be > 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("gamma grid must be strictly increasing")
    X = as_design(X)
    rows = []
    for g in grid:
        jk = jackknife(X, y, Family.nb2(g), options, n_jobs)
        fit = jk.full_fit
        rows.append(SweepRow(
            gamma=g,
            dispersion=_dispersion_or_nan(fit),
            bic_mean=jk.bic_mean,
            bic_std=jk.bic_std,
            converged_fraction=jk.converged_fraction,
            deviance=fit.deviance,
            residual_df=fit.residual_df,
        ))
    return rows


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class StarredCoef:
    name: str
    coefficient: float
    std_err: float
    z: float
    p_value: float
    stars: str


@dataclass(frozen=True)
class CaseReport:
    case_label: str
    family: Family
    log_likelihood: float
    deviance: float
    pearson_chi2: float
    residual_df: int
    n_params: int
    dispersion: float
    bic: float
    coefficients: tuple[StarredCoef, ...]
    excluded_columns: tuple[str, ...] = ()
    lr_test: Optional[LRTestResult] = None
    bic_mean: float = math.nan
    bic_std: float = math.nan
    n_outliers: int = 0
    max_abs_pearson: float = math.nan
    near_zero_fraction: float = math.nan
    converged: bool = True
    description: str = ""
    notes: tuple[str, ...] = field(default=())

    @property
    def gamma(self) -> float:
        return self.family.gamma

    @property
    def overdispersed(self) -> bool:
        return bool(self.dispersion > 1)


def _starred(fit: FitResult) -> tuple[StarredCoef, ...]:
    return tuple(
        StarredCoef(r.name, r.coefficient, r.std_err, r.z, r.p_value, significance_stars(r.p_value))
        for r in coef_inference(fit)
    )


def _case_report(label, fit, full_fit, jk, excluded) -> CaseReport:
    diag = diagnose(fit)
    test = None
    if label != "full":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonNestedWarning)
            test = lr_test(full_fit, fit)
    notes = (CASE_LABEL_NOTE,) if label in ("case3", "case4") else ()
    return CaseReport(
        case_label=label,
        family=fit.family,
        log_likelihood=fit.log_likelihood,
        deviance=fit.deviance,
        pearson_chi2=diag.pearson_chi2,
        residual_df=fit.residual_df,
        n_params=fit.n_params,
        dispersion=diag.dispersion,
        bic=diag.bic,
        coefficients=_starred(fit),
        excluded_columns=tuple(sorted(excluded)),
        lr_test=test,
        bic_mean=jk.bic_mean if jk else math.nan,
        bic_std=jk.bic_std if jk else math.nan,
        n_outliers=int(diag.outlier_indices.size),
        max_abs_pearson=float(np.max(np.abs(diag.pearson_residuals))),
        near_zero_fraction=diag.near_zero_fraction,
        converged=fit.converged,
        description=CASE_DESCRIPTIONS[label],
        notes=notes,
    )


def run_cases(
    records: Sequence[OrgRecord],
    family: Family | str,
    gamma_values: Iterable[float] | None = None,
    cases: Sequence[str] = CASE_LABELS,
    *,
    with_jackknife: bool = True,
    options: IRLSOptions | None = None,
    n_jobs: int = 1,
) -> list[CaseReport]:
    """Fit the full model and each restricted case, for every heterogeneity value.

    Returns one report per (gamma, case), gamma-major. Each restricted case
    carries a likelihood-ratio test against the full model with the same
    family. For Poisson, ``gamma_values`` is ignored.
    """
    kind = family.kind if isinstance(family, Family) else str(family).lower()
    if kind == POISSON:
        families = [Family.poisson()]
    elif kind == NB2:
        if gamma_values is None:
            if not isinstance(family, Family):
                raise DomainError("nb2 cases need gamma values")
            gamma_values = [family.gamma]
        families = [Family.nb2(g) for g in gamma_values]
        if not families:
            raise DomainError("nb2 cases need gamma values")
    else:
        raise DomainError(f"cases are defined for poisson and nb2, not {kind!r}")
    unknown = [c for c in cases if c not in CASE_EXCLUSIONS]
    if unknown:
        raise DomainError(f"unknown case label {unknown[0]!r}")

    designs = {}
    y = None
    for label in dict.fromkeys(("full", *cases)):
        designs[label], y = encode(records, PredictorSchema.for_case(label))

    reports = []
    for fam in families:
        full_fit = irls_fit(designs["full"], y, fam, options)
        for label in cases:
            X = designs[label]
            fit = full_fit if label == "full" else irls_fit(X, y, fam, options)
            jk = jackknife(X, y, fam, options, n_jobs) if with_jackknife else None
            reports.append(_case_report(label, fit, full_fit, jk, CASE_EXCLUSIONS[label]))
    return reports


def badness_score(n_bad: int, n_total: int) -> float:
    """``(n_bad / n_total) * ln(n_bad)``, defined as 0 when ``n_bad == 0``."""
    if n_total < 1:
        raise DomainError(f"n_total must be >= 1, got {n_total}")
    if n_bad < 0 or n_bad > n_total:
        raise DomainError(f"n_bad must lie in [0, n_total], got {n_bad}")
    if n_bad == 0:
        return 0.0
    return n_bad / n_total * math.log(n_bad)


@dataclass(frozen=True)
class RankedModel:
    rank: int
    case_label: str
    gamma: float
    family: str
    bic_mean: float
    dispersion: float
    overdispersed: bool
    n_outliers: int
    near_zero_fraction: float
    report: CaseReport = field(repr=False, compare=False)


def _rank_key(report: CaseReport):
    bic_mean = report.bic_mean if not math.isnan(report.bic_mean) else math.inf
    phi_gap = abs(report.dispersion - 1) if not math.isnan(report.dispersion) else math.inf
    return (bic_mean, phi_gap, report.case_label, report.family.kind, report.gamma)


def compare_models(reports: Sequence[CaseReport]) -> list[RankedModel]:
    """Rank reports by jackknifed mean BIC, lowest first.

    Ties go to the dispersion closer to 1, then to the case label. The
    dispersion, outlier count and share of small deviance residuals ride
    along so that a BIC winner with poor residuals is visible.
    """
    if len(reports) < 2:
        raise DomainError("compare_models needs at least two reports")
    ordered = sorted(reports, key=_rank_key)
    return [
        RankedModel(
            rank=i,
            case_label=r.case_label,
            gamma=r.gamma,
            family=r.family.kind,
            bic_mean=r.bic_mean,
            dispersion=r.dispersion,
            overdispersed=r.overdispersed,
            n_outliers=r.n_outliers,
            near_zero_fraction=r.near_zero_fraction,
            report=r,
        )
        for i, r in enumerate(ordered, start=1)
    ]
