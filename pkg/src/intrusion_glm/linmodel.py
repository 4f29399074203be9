"""Linear baselines: OLS, the condition-number collinearity screen and PC regression.

These are kept for comparison. OLS fitted values can be negative or
fractional, which is why the count models exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from intrusion_glm.countglm import Family, FitResult, check_full_rank, residual_df_for
from intrusion_glm.dataset import DesignMatrix, Standardization, as_design, standardize
from intrusion_glm.errors import SchemaError, SingularMatrixError

COLLINEARITY_THRESHOLD = 20.0


def ols_fit(X, y) -> FitResult:
    """Ordinary least squares; ``deviance`` holds the residual sum of squares."""
    X = as_design(X)
    y = np.asarray(y, dtype=float)
    m, n = X.shape
    if y.shape != (m,):
        raise SchemaError(f"response has {y.shape[0]} entries, design has {m} rows")
    if m <= n:
        raise SingularMatrixError(f"OLS needs more rows than columns ({m} <= {n})")
    check_full_rank(X)

    norms = np.linalg.norm(X.values, axis=0)
    beta_s, *_ = np.linalg.lstsq(X.values / norms, y, rcond=None)
    coef = beta_s / norms
    fitted = X.values @ coef
    rss = float(np.sum((y - fitted) ** 2))
    # Gaussian log-likelihood with the variance profiled out
    ll = -0.5 * m * (math.log(2 * math.pi * rss / m) + 1) if rss > 0 else math.inf
    family = Family.linear()
    return FitResult(
        family=family,
        column_names=X.column_names,
        coefficients=coef,
        covariance=None,
        std_errors=None,
        log_likelihood=ll,
        deviance=rss,
        fitted_means=fitted,
        response=y,
        model_df=n - 1,
        residual_df=residual_df_for(m, n, family),
        n_params=n,
        nobs=m,
        row_ids=X.row_ids,
    )


class ConditionNumber(NamedTuple):
    value: float
    collinear: bool


def _predictor_block(X: DesignMatrix) -> tuple[np.ndarray, Standardization]:
    Z, params = standardize(X)
    if not params.column_names:
        raise SchemaError("no predictor columns besides the intercept")
    return Z.select(params.column_names).values, params


def condition_number(X, threshold: float = COLLINEARITY_THRESHOLD) -> ConditionNumber:
    """Largest over smallest singular value of the standardized predictor block.

    The intercept is left out. The collinearity flag is set when the value
    exceeds ``threshold``.
    """
    X = as_design(X)
    if X.n_rows == 0:
        raise SchemaError("empty design matrix")
    block, _ = _predictor_block(X)
    s = np.linalg.svd(block, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return ConditionNumber(math.inf, True)
    if s[-1] <= s[0] * max(block.shape) * np.finfo(float).eps:
        return ConditionNumber(math.inf, True)
    value = float(s[0] / s[-1])
    return ConditionNumber(value, value > threshold)


@dataclass(frozen=True)
class PCABasis:
    """Principal axes of the standardized predictors.

    ``loadings`` holds the ``k`` retained axes as columns;
    ``explained_variance_ratio`` and ``all_loadings`` cover every axis.
    """

    column_names: tuple[str, ...]
    all_loadings: np.ndarray
    explained_variance_ratio: np.ndarray
    singular_values: np.ndarray
    k: int
    rank: int
    standardization: Standardization

    @property
    def loadings(self) -> np.ndarray:
        return self.all_loadings[:, : self.k]

    @property
    def cumulative_ratio(self) -> np.ndarray:
        return np.cumsum(self.explained_variance_ratio)

    def standardized_block(self, X: DesignMatrix) -> np.ndarray:
        return self.standardization.apply(X).select(self.column_names).values

    def scores(self, X: DesignMatrix, k: int | None = None) -> np.ndarray:
        k = self.k if k is None else k
        return self.standardized_block(X) @ self.all_loadings[:, :k]


def pca(X, variance_target: float = 0.99) -> PCABasis:
    """PCA on the mean-centered, unit-variance predictors (intercept excluded).

    Keeps the fewest components whose cumulative explained-variance ratio
    reaches ``variance_target``. Each axis is signed so its largest-magnitude
    loading is positive.
    """
    if not 0 < variance_target <= 1:
        raise ValueError(f"variance_target must be in (0, 1], got {variance_target}")
    X = as_design(X)
    block, params = _predictor_block(X)
    _, s, vt = np.linalg.svd(block, full_matrices=False)
    V = vt.T.copy()
    for j in range(V.shape[1]):
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]

    total = float(np.sum(s**2))
    if total == 0:
        ratios = np.zeros_like(s)
        rank = 0
        k = 0
    else:
        ratios = s**2 / total
        rank = int(np.sum(s > s[0] * max(block.shape) * np.finfo(float).eps))
        reached = np.cumsum(ratios) >= variance_target - 1e-12
        k = min(int(np.argmax(reached)) + 1, rank)
    return PCABasis(
        column_names=params.column_names,
        all_loadings=V,
        explained_variance_ratio=ratios,
        singular_values=s,
        k=k,
        rank=rank,
        standardization=params,
    )


@dataclass(frozen=True, kw_only=True)
class PCFitResult(FitResult):
    """OLS fit on principal-component scores.

    ``coefficients`` are in PC space (intercept, pc1..pck);
    ``original_coefficients`` are the same fit expressed on the original
    predictor columns.
    """

    basis: PCABasis
    original_column_names: tuple[str, ...]
    original_coefficients: np.ndarray


def pc_regression(X, y, variance_target: float = 0.99) -> PCFitResult:
    X = as_design(X)
    basis = pca(X, variance_target)
    if basis.k == 0:
        raise SingularMatrixError("predictors have no variance; nothing to regress on")
    T = basis.scores(X)
    names = tuple(f"pc{j + 1}" for j in range(basis.k))
    pc_design = DesignMatrix.from_arrays(T, names, X.row_ids, add_intercept=True)
    fit = ols_fit(pc_design, y)

    b0, c = fit.coefficients[0], fit.coefficients[1:]
    std = basis.standardization
    slopes = (basis.loadings @ c) / std.scale
    intercept = b0 - float(np.dot(std.mean, slopes))
    original = dict(zip(std.column_names, slopes))
    original_names = X.column_names if X.has_intercept else ("intercept", *X.column_names)
    original_coef = np.array([intercept if n == "intercept" else original[n]
                              for n in original_names])

    fields = {f: getattr(fit, f) for f in FitResult.__dataclass_fields__}
    return PCFitResult(
        **fields,
        basis=basis,
        original_column_names=original_names,
        original_coefficients=original_coef,
    )
