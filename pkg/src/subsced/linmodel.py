"""Least-squares estimators and their exact finite-sample covariance algebra.

Notation used throughout the package:

* ``omega`` (truth) are the error variances of the heteroscedastic model.
* ``omega_tilde`` (candidate / fls weights) are the variances plugged into the
  feasible weighted least squares (FLS) estimator, i.e. observation ``i`` gets
  weight ``1 / omega_tilde[i]``.

All numerical work is done through the QR factorisation of the whitened design
``diag(omega_tilde)^{-1/2} X``; explicit normal-equation inverses are avoided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    NonPositive,
    NonPSD,
    NotPD,
    NotSymmetric,
    RankDeficient,
)

__all__ = [
    "Design",
    "DiagonalWeights",
    "FullCovariance",
    "Method",
    "RegressionFit",
    "eigendecompose",
    "fls_fit",
    "generalized_variance",
    "sandwich_cov",
    "sgv",
    "total_variance",
    "wls_coef",
]

RCOND_MIN = 1e-12


def _readonly(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class DiagonalWeights:
    """Strictly positive diagonal of an n x n covariance or weight matrix."""

    __slots__ = ("_d",)

    def __init__(self, d: ArrayLike):
        arr = np.asarray(d, dtype=float).ravel()
        if arr.size == 0:
            raise DimensionMismatch("weights must be non-empty")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise NonPositive("diagonal weights must be finite and strictly positive")
        self._d = _readonly(arr)

    @classmethod
    def ones(cls, n: int) -> DiagonalWeights:
        return cls(np.ones(n))

    @property
    def d(self) -> NDArray:
        return self._d

    def __len__(self) -> int:
        return self._d.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._d, dtype=dtype)

    def __repr__(self) -> str:
        return f"DiagonalWeights({self._d!r})"

    def inverse(self) -> DiagonalWeights:
        return DiagonalWeights(1.0 / self._d)

    def scaled(self, s: float) -> DiagonalWeights:
        return DiagonalWeights(s * self._d)

    def sqrt(self) -> NDArray:
        return np.sqrt(self._d)


def as_weights(w: DiagonalWeights | ArrayLike) -> DiagonalWeights:
    return w if isinstance(w, DiagonalWeights) else DiagonalWeights(w)


class Design:
    """Full-rank n x p regressor matrix with a cached orthonormal column basis."""

    __slots__ = ("_X", "_U")

    def __init__(self, X: ArrayLike):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DimensionMismatch("design must be a 2-d array")
        n, p = X.shape
        if not p < n:
            raise DimensionMismatch(f"need p < n, got n={n}, p={p}")
        if not np.all(np.isfinite(X)):
            raise DimensionMismatch("design contains non-finite entries")
        Q, R = np.linalg.qr(X)
        _check_rcond(R)
        self._X = _readonly(X)
        self._U = _readonly(Q)

    @classmethod
    def from_basis(cls, U: ArrayLike) -> Design:
        return cls(U)

    @property
    def X(self) -> NDArray:
        return self._X

    @property
    def U(self) -> NDArray:
        return self._U

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def p(self) -> int:
        return self._X.shape[1]

    def __repr__(self) -> str:
        return f"Design(n={self.n}, p={self.p})"


def as_design(X: Design | ArrayLike) -> Design:
    return X if isinstance(X, Design) else Design(X)


class Method(str, Enum):
    OLS = "OLS"
    WLS = "WLS"
    FLS = "FLS"
    T_MLE = "T_MLE"
    HUBER = "HUBER"


@dataclass(frozen=True)
class RegressionFit:
    """Coefficients plus (optionally) a covariance estimate and diagnostics.

    ``cov_estimator`` names how ``cov`` was obtained (``"exact"`` when it is
    the sandwich under a known truth, ``"HC0"``, ``"t-sandwich"`` ...).
    """

    beta: NDArray
    method: Method
    cov: NDArray | None = None
    cov_estimator: str | None = None
    weights_used: DiagonalWeights | None = None
    iterations: int = 0
    converged: bool = True
    objective: float = float("nan")
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        beta = _readonly(np.atleast_1d(self.beta))
        object.__setattr__(self, "beta", beta)
        if self.cov is not None:
            cov = np.asarray(self.cov, dtype=float)
            if cov.shape != (beta.size, beta.size):
                raise DimensionMismatch("cov shape does not match beta")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * max(1.0, np.abs(cov).max())):
                raise NotSymmetric("covariance estimate is not symmetric")
            object.__setattr__(self, "cov", _readonly(0.5 * (cov + cov.T)))

    def with_cov(self, cov: NDArray, estimator: str) -> RegressionFit:
        return RegressionFit(
            beta=self.beta,
            method=self.method,
            cov=cov,
            cov_estimator=estimator,
            weights_used=self.weights_used,
            iterations=self.iterations,
            converged=self.converged,
            objective=self.objective,
            extra=dict(self.extra),
        )


class FullCovariance:
    """Symmetric positive definite n x n matrix with its spectral decomposition.

    Eigenvalues are stored in descending order.
    """

    __slots__ = ("_V", "_vecs", "_vals")

    def __init__(self, V: ArrayLike, eigvecs: ArrayLike, eigvals: ArrayLike):
        self._V = _readonly(V)
        self._vecs = _readonly(eigvecs)
        self._vals = _readonly(eigvals)

    @classmethod
    def from_spectrum(cls, eigvecs: ArrayLike, eigvals: ArrayLike) -> FullCovariance:
        vecs = np.asarray(eigvecs, dtype=float)
        vals = np.asarray(eigvals, dtype=float)
        if np.any(vals <= 0):
            raise NotPD("eigenvalues must be strictly positive")
        order = np.argsort(-vals, kind="stable")
        vecs, vals = vecs[:, order], vals[order]
        V = (vecs * vals) @ vecs.T
        return cls(0.5 * (V + V.T), vecs, vals)

    @property
    def V(self) -> NDArray:
        return self._V

    @property
    def eigvecs(self) -> NDArray:
        return self._vecs

    @property
    def eigvals(self) -> NDArray:
        return self._vals

    @property
    def n(self) -> int:
        return self._V.shape[0]


def _check_rcond(R: NDArray) -> None:
    s = np.linalg.svd(R, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] / s[0] < RCOND_MIN:
        raise RankDeficient("design (after weighting) is numerically rank deficient")


def _whitened_qr(X: NDArray, w: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """QR of diag(w)^{-1/2} X; returns (Q, R, row scale)."""
    scale = 1.0 / np.sqrt(w)
    Q, R = np.linalg.qr(X * scale[:, None])
    _check_rcond(R)
    return Q, R, scale


def _check_lengths(n: int, *vectors: NDArray) -> None:
    for v in vectors:
        if len(v) != n:
            raise DimensionMismatch(f"expected length {n}, got {len(v)}")


def wls_coef(X: NDArray, y: NDArray, var: NDArray) -> NDArray:
    """Coefficients of the weighted fit with weights ``1/var``; no validation.

    For inner loops of iterative estimators whose inputs were already checked.
    """
    s = 1.0 / np.sqrt(var)
    Q, R = np.linalg.qr(X * s[:, None])
    return solve_triangular(R, Q.T @ (y * s))


def fls_fit(design: Design | ArrayLike, y: ArrayLike, weights: DiagonalWeights | ArrayLike | None = None,
            method: Method | None = None) -> RegressionFit:
    """Feasible weighted least squares ``(X'W X)^{-1} X'W y`` with ``W = diag(1/weights)``.

    ``weights=None`` (or all ones) is OLS. The returned fit carries no
    covariance; use :func:`sandwich_cov` when the truth is known.
    """
    design = as_design(design)
    y = np.asarray(y, dtype=float).ravel()
    w = DiagonalWeights.ones(design.n) if weights is None else as_weights(weights)
    _check_lengths(design.n, y, w.d)
    Q, R, scale = _whitened_qr(design.X, w.d)
    beta = np.linalg.solve(R, Q.T @ (y * scale))
    resid = y - design.X @ beta
    if method is None:
        method = Method.OLS if np.all(w.d == w.d[0]) else Method.FLS
    return RegressionFit(
        beta=beta,
        method=method,
        weights_used=w,
        objective=float(np.sum(resid**2 / w.d)),
    )


def sandwich_cov(design: Design | ArrayLike, fls_weights: DiagonalWeights | ArrayLike,
                 true_var: DiagonalWeights | ArrayLike) -> NDArray:
    """Exact covariance of the FLS estimate under diagonal error covariance ``true_var``.

    (X'W X)^{-1} X'W Omega W X (X'W X)^{-1}, ``W = diag(fls_weights)^{-1}``.
    """
    design = as_design(design)
    wt = as_weights(fls_weights).d
    om = as_weights(true_var).d
    _check_lengths(design.n, wt, om)
    Q, R, _ = _whitened_qr(design.X, wt)
    # R^{-1} Q' diag(sqrt(om/wt)) is the p x n map whose Gram matrix is H
    M = np.linalg.solve(R, Q.T * np.sqrt(om / wt))
    H = M @ M.T
    return 0.5 * (H + H.T)


def _psd_eigvals(cov: ArrayLike) -> NDArray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch("covariance must be square")
    ev = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if ev.size and ev.min() < -1e-8:
        raise NonPSD(f"matrix has eigenvalue {ev.min():.3g} < -1e-8")
    return ev


def generalized_variance(cov: ArrayLike) -> float:
    """Determinant of a covariance matrix."""
    _psd_eigvals(cov)
    return float(np.linalg.det(np.atleast_2d(cov)))


def total_variance(cov: ArrayLike) -> float:
    _psd_eigvals(cov)
    return float(np.trace(np.atleast_2d(cov)))


def sgv(cov: ArrayLike, p: int | None = None) -> float:
    """Standardized generalized variance ``det(cov) ** (1/p)``.

    Computed through the log-determinant so large p does not overflow.
    """
    ev = _psd_eigvals(cov)
    p = ev.size if p is None else p
    if np.any(ev <= 0):
        return 0.0
    return float(np.exp(np.sum(np.log(ev)) / p))


def eigendecompose(V: ArrayLike) -> FullCovariance:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise DimensionMismatch("expected a square matrix")
    if not np.allclose(V, V.T, rtol=0, atol=1e-10 * max(1.0, np.abs(V).max())):
        raise NotSymmetric("matrix is not symmetric within 1e-10")
    Vs = 0.5 * (V + V.T)
    vals, vecs = np.linalg.eigh(Vs)
    if vals.min() <= 0:
        raise NotPD("matrix is not positive definite")
    order = np.argsort(-vals, kind="stable")
    return FullCovariance(Vs, vecs[:, order], vals[order])
