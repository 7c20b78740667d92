"""Huber M-estimation by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..errors import DimensionMismatch, NonPositive, NotConverged, SingularHessian
from ..linmodel import Design, DiagonalWeights, Method, RegressionFit, as_design, fls_fit, sandwich_cov, wls_coef
from .special import huber_asym_fg

__all__ = ["DEFAULT_K", "HuberParams", "huber_asym_cov", "huber_fit", "huber_loss", "huber_sandwich_cov"]

DEFAULT_K = 1.345


@dataclass(frozen=True)
class HuberParams:
    k: float = DEFAULT_K

    def __post_init__(self):
        if not self.k > 0:
            raise NonPositive("k must be positive")


def huber_loss(r: ArrayLike, k: float) -> NDArray:
    a = np.abs(np.asarray(r, dtype=float))
    return np.where(a < k, 0.5 * a * a, k * a - 0.5 * k * k)


def huber_fit(design: Design | ArrayLike, y: ArrayLike, params: HuberParams | None = None, *,
              tol: float = 1e-10, max_iter: int = 10000, strict: bool = True) -> RegressionFit:
    """Minimise ``sum rho_k(y_i - x_i' beta)`` by IRLS with weights ``min(1, k/|r|)``."""
    params = params or HuberParams()
    k = params.k
    design = as_design(design)
    X = design.X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != design.n:
        raise DimensionMismatch("y length does not match design")
    beta = fls_fit(design, y).beta
    converged = False
    var = np.ones(design.n)
    it = 0
    for it in range(1, max_iter + 1):
        a = np.abs(y - X @ beta)
        # IRLS weight min(1, k/|r|) expressed as a variance max(1, |r|/k)
        var = np.maximum(1.0, np.maximum(a, 1e-300) / k)
        new = wls_coef(X, y, var)
        change = np.max(np.abs(new - beta)) / max(np.max(np.abs(new)), 1e-12)
        beta = new
        if change < tol:
            converged = True
            break
    r = y - X @ beta
    fit = RegressionFit(beta=beta, method=Method.HUBER, weights_used=DiagonalWeights(var), iterations=it,
                        converged=converged, objective=float(np.sum(huber_loss(r, k))), extra={"k": k})
    if not converged and strict:
        raise NotConverged(f"Huber IRLS did not converge in {max_iter} iterations", fit)
    return fit


def huber_asym_cov(design_rows: Design | ArrayLike, omegas: ArrayLike, k: float) -> NDArray:
    """``V^{-1} B V^{-1}`` with ``V = sum x x'/g_k(w_i)`` and ``B = sum x x'/f_k(w_i)``."""
    design = as_design(design_rows)
    f, g = huber_asym_fg(np.asarray(omegas, dtype=float), k)
    return sandwich_cov(design, g, g * g / f)


def huber_sandwich_cov(design: Design | ArrayLike, residuals: ArrayLike, k: float) -> NDArray:
    """Empirical sandwich ``A^{-1} B A^{-1}``, ``A = X' diag(1{|r|<k}) X``, ``B = X' diag(psi(r)^2) X``."""
    design = as_design(design)
    X = design.X
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size != design.n:
        raise DimensionMismatch("residual length does not match design")
    inside = (np.abs(r) < k).astype(float)
    psi = np.clip(r, -k, k)
    A = (X * inside[:, None]).T @ X
    B = (X * (psi * psi)[:, None]).T @ X
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise SingularHessian("too few observations in the quadratic region")
    Ainv = np.linalg.inv(A)
    cov = Ainv @ B @ Ainv
    return 0.5 * (cov + cov.T)
