"""Leave-one-out (jackknife) cross-validation of count models."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from intrusion_glm.countglm import Family, FitResult, IRLSOptions, irls_fit, predict
from intrusion_glm.dataset import as_design
from intrusion_glm.diagnostics import bic, pearson_residuals
from intrusion_glm.errors import IntrusionGLMError, JackknifeWarning, SchemaError


@dataclass(frozen=True)
class FoldResult:
    left_out: int
    fit: Optional[FitResult]
    prediction: float
    bic: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.fit is None

    @property
    def converged(self) -> bool:
        return self.fit is not None and self.fit.converged


@dataclass(frozen=True)
class JackknifeResult:
    """Per-fold fits and their aggregates.

    Failed folds (rank-deficient training sets) keep their slot in ``folds``
    but are left out of every aggregate.
    """

    family: Family
    column_names: tuple[str, ...]
    observed: np.ndarray
    folds: tuple[FoldResult, ...]
    full_fit: FitResult
    bic_mean: float
    bic_std: float
    coef_mean: np.ndarray
    coef_std: np.ndarray
    coef_se: np.ndarray

    @property
    def m(self) -> int:
        return len(self.folds)

    @property
    def predictions(self) -> np.ndarray:
        return np.array([f.prediction for f in self.folds])

    @property
    def fold_bics(self) -> np.ndarray:
        return np.array([f.bic for f in self.folds])

    @property
    def valid(self) -> np.ndarray:
        return np.array([not f.failed for f in self.folds])

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.valid))

    @property
    def converged_fraction(self) -> float:
        return float(np.mean([f.converged for f in self.folds]))


def _fit_fold(X, y, family, options, i):
    keep = np.ones(X.n_rows, dtype=bool)
    keep[i] = False
    try:
        fit = irls_fit(X.take(keep), y[keep], family, options, warn=False)
    except IntrusionGLMError as exc:
        return FoldResult(i, None, math.nan, math.nan, str(exc))
    mu = float(predict(fit, X.values[i : i + 1])[0])
    return FoldResult(i, fit, mu, bic(fit.deviance, fit.residual_df, fit.nobs))


def _aggregate(values: np.ndarray):
    n = values.shape[0]
    if n == 0:
        return np.full(values.shape[1:], math.nan), np.full(values.shape[1:], math.nan), \
            np.full(values.shape[1:], math.nan)
    mean = values.mean(axis=0)
    if n < 2:
        nan = np.full_like(mean, math.nan)
        return mean, nan, nan
    std = values.std(axis=0, ddof=1)
    se = np.sqrt((n - 1) / n * np.sum((values - mean) ** 2, axis=0))
    return mean, std, se


def jackknife(
    X,
    y,
    family: Family,
    options: IRLSOptions | None = None,
    n_jobs: int = 1,
) -> JackknifeResult:
    """Refit the model ``m`` times, each time predicting the held-out row.

    Fold ``i`` is trained on every row except ``i``. Its BIC uses the fold's
    own deviance, residual DF and ``m - 1`` observations. Folds run on up to
    ``n_jobs`` threads; results are always collected in row order.
    """
    X = as_design(X)
    y = np.asarray(y, dtype=float)
    m, n = X.shape
    if y.shape != (m,):
        raise SchemaError(f"response has {y.shape[0]} entries, design has {m} rows")
    if m - 1 < n:
        raise SchemaError(f"jackknife needs at least {n + 1} rows for {n} coefficients")
    if m - 1 - (n + family.extra_params) - 1 < 1:
        warnings.warn(
            "jackknife folds have no residual degrees of freedom",
            JackknifeWarning,
            stacklevel=2,
        )

    full_fit = irls_fit(X, y, family, options)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            folds = tuple(pool.map(lambda i: _fit_fold(X, y, family, options, i), range(m)))
    else:
        folds = tuple(_fit_fold(X, y, family, options, i) for i in range(m))

    ok = [f for f in folds if not f.failed]
    if not ok:
        raise IntrusionGLMError(f"all {m} jackknife folds failed: {folds[0].error}")
    failed = [f.left_out for f in folds if f.failed]
    stalled = [f.left_out for f in ok if not f.fit.converged]
    if failed or stalled:
        warnings.warn(
            f"jackknife: {len(failed)} fold(s) failed and were excluded {failed}; "
            f"{len(stalled)} fold(s) did not converge {stalled}",
            JackknifeWarning,
            stacklevel=2,
        )

    bics = np.array([f.bic for f in ok])
    bic_mean = float(bics.mean())
    bic_std = float(bics.std(ddof=1)) if len(bics) > 1 else math.nan
    coef_mean, coef_std, coef_se = _aggregate(np.array([f.fit.coefficients for f in ok]))
    return JackknifeResult(
        family=family,
        column_names=X.column_names,
        observed=y,
        folds=folds,
        full_fit=full_fit,
        bic_mean=bic_mean,
        bic_std=bic_std,
        coef_mean=coef_mean,
        coef_std=coef_std,
        coef_se=coef_se,
    )


@dataclass(frozen=True)
class PredictionRow:
    index: int
    row_id: str
    observed: float
    predicted: float
    pearson_residual: float


def jackknife_predictions_table(result: JackknifeResult) -> list[PredictionRow]:
    """Observed value, held-out prediction and their Pearson residual per fold.

    Failed folds have no prediction and are skipped.
    """
    rows = []
    row_ids = result.full_fit.row_ids
    for fold in result.folds:
        if fold.failed:
            continue
        i = fold.left_out
        obs = float(result.observed[i])
        resid = float(pearson_residuals([obs], [fold.prediction], result.family)[0])
        rid = row_ids[i] if row_ids else str(i)
        rows.append(PredictionRow(i, rid, obs, fold.prediction, resid))
    return rows
