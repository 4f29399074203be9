"""Count regression for per-organization intrusion data.

Poisson and NB2 generalized linear models fitted by IRLS, with residual,
deviance and BIC diagnostics, jackknife cross-validation, heterogeneity
sweeps and predictor-restriction studies.
"""

from intrusion_glm.countglm import (
    Family,
    FitResult,
    IRLSOptions,
    coef_inference,
    irls_fit,
    log_gamma,
    log_likelihood,
    nb2_log_pmf,
    poisson_log_pmf,
    predict,
)
from intrusion_glm.dataset import (
    DesignMatrix,
    OrgRecord,
    PredictorSchema,
    SynthConfig,
    encode,
    load_csv,
    simulate,
    standardize,
    write_csv,
)
from intrusion_glm.diagnostics import (
    bic,
    chi2_sf,
    deviance,
    deviance_residuals,
    diagnose,
    dispersion,
    lr_test,
    normal_two_sided_p,
    pearson_residuals,
)
from intrusion_glm.linmodel import condition_number, ols_fit, pc_regression, pca
from intrusion_glm.study import badness_score, compare_models, gamma_sweep, run_cases
from intrusion_glm.validation import jackknife, jackknife_predictions_table

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix",
    "Family",
    "FitResult",
    "IRLSOptions",
    "OrgRecord",
    "PredictorSchema",
    "SynthConfig",
    "badness_score",
    "bic",
    "chi2_sf",
    "coef_inference",
    "compare_models",
    "condition_number",
    "deviance",
    "deviance_residuals",
    "diagnose",
    "dispersion",
    "encode",
    "gamma_sweep",
    "irls_fit",
    "jackknife",
    "jackknife_predictions_table",
    "load_csv",
    "log_gamma",
    "log_likelihood",
    "lr_test",
    "nb2_log_pmf",
    "normal_two_sided_p",
    "ols_fit",
    "pc_regression",
    "pca",
    "pearson_residuals",
    "poisson_log_pmf",
    "predict",
    "run_cases",
    "simulate",
    "standardize",
    "write_csv",
]
