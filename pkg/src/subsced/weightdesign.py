"""Constructing feasible weights from partial knowledge of the heteroscedasticity."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import null_space

from .errors import BadOrdering, DegenerateCovariate, DimensionMismatch, EmptyBatch, NonPositive
from .grm import ScedasticFunction
from .linmodel import Design, DiagonalWeights, FullCovariance, as_design, as_weights, fls_fit

__all__ = [
    "GroupSpec",
    "MixedSpec",
    "VarianceForm",
    "covariate_weights",
    "groupwise_weights",
    "mixed_basis",
    "mixed_effects_covariance",
    "mixed_effects_weights",
    "parametric_fls_weights",
    "regularize_weights",
    "singleton_groups",
    "variance_function",
]

RESID_FLOOR = 0.01**2
ABS_X_FLOOR = 1e-8


@dataclass(frozen=True)
class GroupSpec:
    """``group_of[i]`` is the 0-based group of observation i; ``order`` lists
    groups from lowest to highest variance."""

    group_of: NDArray
    order: NDArray
    gamma: float

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=int).ravel()
        o = np.asarray(self.order, dtype=int).ravel()
        object.__setattr__(self, "group_of", g)
        object.__setattr__(self, "order", o)
        if self.gamma < 1:
            raise NonPositive("gamma must be >= 1")
        K = o.size
        if not np.array_equal(np.sort(o), np.arange(K)):
            raise BadOrdering("order must be a permutation of the group labels")
        if g.size == 0 or g.min() < 0 or g.max() >= K:
            raise BadOrdering("group labels must lie in 0..K-1")
        if np.unique(g).size != K:
            raise EmptyBatch("every group needs at least one observation")


def singleton_groups(ranks: ArrayLike, gamma: float) -> GroupSpec:
    """One group per observation; ``ranks[i]`` is the 0-based variance rank of observation i."""
    r = np.asarray(ranks, dtype=int).ravel()
    if not np.array_equal(np.sort(r), np.arange(r.size)):
        raise BadOrdering("ranks must be a permutation of 0..n-1")
    return GroupSpec(np.arange(r.size), np.argsort(r), gamma)


def groupwise_weights(spec: GroupSpec) -> DiagonalWeights:
    """Geometric weights with step ``2*gamma - 1`` along the known group order."""
    K = spec.order.size
    per_group = np.empty(K)
    per_group[spec.order] = (2.0 * spec.gamma - 1.0) ** np.arange(K)
    return DiagonalWeights(per_group[spec.group_of])


def covariate_weights(v: ScedasticFunction, x_col: ArrayLike) -> DiagonalWeights:
    x = np.asarray(x_col, dtype=float).ravel()
    with np.errstate(all="ignore"):
        w = v(x)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        bad = int(np.flatnonzero(~(np.isfinite(w) & (w > 0)))[0])
        raise DegenerateCovariate(f"variance function undefined or non-positive at x={x[bad]:g}")
    return DiagonalWeights(w)


class VarianceForm(str, Enum):
    ABS_POWER = "ABS_POWER"      # |x|^theta
    LOG_POWER = "LOG_POWER"      # log(|x|)^theta
    EXP_QUAD = "EXP_QUAD"        # exp(theta|x| + theta x^2)


def variance_function(form: VarianceForm | str, theta: float) -> ScedasticFunction:
    """Common covariate-driven variance functions ``v_theta(x)``."""
    form = VarianceForm(form)
    if form is VarianceForm.ABS_POWER:
        fn = lambda x: np.abs(x) ** theta  # noqa: E731
    elif form is VarianceForm.LOG_POWER:
        fn = lambda x: np.log(np.abs(x)) ** theta  # noqa: E731
    else:
        fn = lambda x: np.exp(theta * np.abs(x) + theta * x * x)  # noqa: E731
    return ScedasticFunction(fn, form.value.lower(), {"theta": theta})


@dataclass(frozen=True)
class MixedSpec:
    """Random-intercept structure: ``A`` is the n x K batch indicator matrix."""

    A: NDArray
    gamma: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2:
            raise DimensionMismatch("A must be n x K")
        object.__setattr__(self, "A", A)
        if not self.gamma > 0:
            raise NonPositive("gamma must be positive")
        if not np.all((A == 0) | (A == 1)) or not np.all(A.sum(axis=1) == 1):
            raise DimensionMismatch("each row of A needs exactly one 1")
        if np.any(A.sum(axis=0) < 1):
            raise EmptyBatch("every batch needs at least one observation")

    @classmethod
    def from_sizes(cls, sizes, gamma: float) -> MixedSpec:
        labels = np.repeat(np.arange(len(sizes)), sizes)
        A = np.zeros((labels.size, len(sizes)))
        A[np.arange(labels.size), labels] = 1.0
        return cls(A, gamma)

    @property
    def sizes(self) -> NDArray:
        return self.A.sum(axis=0)


def mixed_basis(A: NDArray) -> NDArray:
    sizes = A.sum(axis=0)
    Q = null_space(A.T)
    return np.hstack([A / np.sqrt(sizes), Q])


def mixed_effects_weights(spec: MixedSpec) -> FullCovariance:
    """Candidate covariance sharing eigenvectors with ``theta1^2 AA' + theta0^2 I``.

    Eigenvalues are ``n_k + gamma`` on the batch directions and ``gamma``
    elsewhere.
    """
    U = mixed_basis(spec.A)
    n, K = spec.A.shape
    lam = np.concatenate([spec.sizes + spec.gamma, np.full(n - K, spec.gamma)])
    return FullCovariance.from_spectrum(U, lam)


def mixed_effects_covariance(A: ArrayLike, theta0: float, theta1: float) -> FullCovariance:
    """True marginal covariance ``theta1^2 AA' + theta0^2 I``."""
    A = np.asarray(A, dtype=float)
    U = mixed_basis(A)
    n, K = A.shape
    lam = np.concatenate([theta1**2 * A.sum(axis=0) + theta0**2, np.full(n - K, theta0**2)])
    return FullCovariance.from_spectrum(U, lam)


class ParametricForm(str, Enum):
    LOG_ABS_X = "LOG_ABS_X"
    LINEAR_X = "LINEAR_X"


def _has_intercept_col(X: NDArray) -> NDArray:
    return np.all(X == X[0:1, :], axis=0)


def parametric_fls_weights(design: Design | ArrayLike, y: ArrayLike, form: ParametricForm | str,
                           resid_floor: float = RESID_FLOOR) -> DiagonalWeights:
    """Two-stage parametric variance fit.

    Regress ``log max(resid_floor, e^2)`` from an OLS fit on an intercept plus
    ``log|x_j|`` (LOG_ABS_X) or ``x_j`` (LINEAR_X) for each non-constant
    column, and return ``exp(fitted)``.
    """
    design = as_design(design)
    form = ParametricForm(form)
    X, n = design.X, design.n
    if not n > design.p + 1:
        raise DimensionMismatch("need n > p + 1")
    y = np.asarray(y, dtype=float).ravel()
    beta = fls_fit(design, y).beta
    resid = y - X @ beta
    z = np.log(np.maximum(resid_floor, resid**2))
    cov = X[:, ~_has_intercept_col(X)]
    if form is ParametricForm.LOG_ABS_X:
        cov = np.log(np.maximum(np.abs(cov), ABS_X_FLOOR))
    Z = np.hstack([np.ones((n, 1)), cov])
    theta = fls_fit(Design(Z), z).beta
    return DiagonalWeights(np.exp(Z @ theta))


def regularize_weights(w: DiagonalWeights | ArrayLike, s: float) -> DiagonalWeights:
    if not s > 0:
        raise NonPositive("s must be positive")
    return DiagonalWeights(as_weights(w).d + s)
