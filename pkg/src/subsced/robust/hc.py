"""Covariance estimators for OLS coefficients and the wild bootstrap."""

from __future__ import annotations

from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..errors import DimensionMismatch, LeverageOne
from ..linmodel import Design, as_design

__all__ = ["HCVariant", "hat_diagonal", "hc_cov", "homoscedastic_cov", "wild_bootstrap_response"]


class HCVariant(str, Enum):
    HC0 = "HC0"
    HC1 = "HC1"
    HC2 = "HC2"
    HC3 = "HC3"


def hat_diagonal(design: Design | ArrayLike) -> NDArray:
    U = as_design(design).U
    return np.einsum("ij,ij->i", U, U)


def _bread(design: Design) -> NDArray:
    # (X'X)^{-1} X' = R^{-1} U'
    R = np.linalg.qr(design.X, mode="r")
    return np.linalg.solve(R, design.U.T)


def hc_cov(design: Design | ArrayLike, residuals: ArrayLike, variant: HCVariant | str = HCVariant.HC0) -> NDArray:
    """White-type covariance ``(X'X)^{-1} X' diag(c_i e_i^2) X (X'X)^{-1}``."""
    design = as_design(design)
    variant = HCVariant(variant)
    e = np.asarray(residuals, dtype=float).ravel()
    n, p = design.n, design.p
    if e.size != n:
        raise DimensionMismatch("residual length does not match design")
    if variant is HCVariant.HC0:
        c = np.ones(n)
    elif variant is HCVariant.HC1:
        c = np.full(n, n / (n - p))
    else:
        h = hat_diagonal(design)
        if np.any(h >= 1 - 1e-12):
            raise LeverageOne("an observation has leverage 1")
        c = 1 / (1 - h) if variant is HCVariant.HC2 else 1 / (1 - h) ** 2
    M = _bread(design) * (np.abs(e) * np.sqrt(c))
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


def homoscedastic_cov(design: Design | ArrayLike, residuals: ArrayLike) -> NDArray:
    design = as_design(design)
    e = np.asarray(residuals, dtype=float).ravel()
    s2 = float(e @ e) / (design.n - design.p)
    B = _bread(design)
    return s2 * (B @ B.T)


def wild_bootstrap_response(fitted: ArrayLike, residuals: ArrayLike, leverage: ArrayLike,
                            z: ArrayLike) -> NDArray:
    """``y* = fitted + e / sqrt(1 - h) * z`` for multiplier draws ``z``."""
    return np.asarray(fitted) + np.asarray(residuals) / np.sqrt(1 - np.asarray(leverage)) * np.asarray(z)
