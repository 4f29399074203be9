"""Special functions: log-gamma and the chi-square / normal upper tails.

Thin, domain-checked wrappers over ``scipy.special``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as sc

from intrusion_glm.errors import DomainError


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("log_gamma requires x > 0")
    out = sc.gammaln(arr)
    return float(out) if out.ndim == 0 else out


def chi2_sf(x, k):
    """Upper tail ``P(X > x)`` of a chi-square variable with ``k`` degrees of freedom."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr >= 0)):
        raise DomainError("chi2_sf requires x >= 0")
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise DomainError(f"chi2_sf requires a positive integer k, got {k!r}")
    out = sc.gammaincc(k / 2.0, arr / 2.0)
    return float(out) if out.ndim == 0 else out


def normal_two_sided_p(z):
    """Two-sided standard-normal tail ``P(|Z| > |z|)``."""
    arr = np.asarray(z, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError("normal_two_sided_p requires a non-NaN z")
    out = sc.erfc(np.abs(arr) / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out
