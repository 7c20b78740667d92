"""Maximum marginal likelihood for the linear model with independent t errors.

Model: ``y_i | w_i ~ N(x_i' beta, w_i)`` with ``w_i ~ IG(nu/2, nu*omega0/2)``,
fitted by EM over the latent variances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq
from scipy.special import digamma, gammaln
from scipy.stats import norm

from ..errors import DegenerateScale, DimensionMismatch, NonPositive, NotConverged, SingularHessian
from ..linmodel import Design, DiagonalWeights, Method, RegressionFit, as_design, fls_fit, sandwich_cov, wls_coef
from .special import t_asym_fg

__all__ = [
    "EMTrace",
    "TModelParams",
    "nu_lower_bound",
    "t_asym_cov",
    "t_em_fit",
    "t_loglik",
    "t_sandwich_ci",
    "t_score",
]

NU_BOUNDS = (0.1, 1000.0)
DEFAULT_NU = 7.0


def nu_lower_bound(n: int, p: int) -> float:
    """Smallest admissible degrees of freedom for a sample of size n.

    For nu < p/(n-p) the likelihood is unbounded: interpolating p points while
    omega0 -> 0 drives it to infinity. Twice that value keeps the search away
    from the degenerate region.
    """
    return max(NU_BOUNDS[0], 2.0 * p / (n - p))


@dataclass(frozen=True)
class TModelParams:
    beta: NDArray
    omega0: float
    nu: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        if not (self.omega0 > 0 and self.nu > 0):
            raise NonPositive("omega0 and nu must be positive")


@dataclass
class EMTrace:
    loglik: list[float] = field(default_factory=list)
    params: list[tuple[NDArray, float, float]] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.loglik) - 1, 0)

    def is_monotone(self, slack: float = 1e-8) -> bool:
        ll = np.asarray(self.loglik)
        return bool(np.all(np.diff(ll) >= -slack))


def t_loglik(resid: ArrayLike, omega0: float, nu: float) -> float:
    """Marginal log-likelihood of residuals under the scaled t model."""
    r = np.asarray(resid, dtype=float)
    n = r.size
    const = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(np.pi * nu) - 0.5 * np.log(omega0)
    return float(n * const - 0.5 * (nu + 1) * np.sum(np.log1p(r * r / (nu * omega0))))


def t_score(X: NDArray, resid: NDArray, omega0: float, nu: float) -> NDArray:
    """Sum over observations of the gradient of the log-likelihood in beta."""
    return X.T @ ((nu + 1) * resid / (nu * omega0 + resid**2))


def _nu_update(sum_l: float, sum_w: float, n: int, omega0: float, lo: float, hi: float) -> float:
    """Maximise the expected complete-data log-likelihood in nu over [lo, hi].

    The objective is strictly concave in nu, so its maximiser is the unique
    root of the derivative (or a bound when the derivative keeps one sign).
    """
    c = (sum_l + omega0 * sum_w) / n

    def deriv(v):
        return np.log(v * omega0 / 2) + 1 - digamma(v / 2) - c

    if deriv(lo) <= 0:
        return lo
    if deriv(hi) >= 0:
        return hi
    return brentq(deriv, lo, hi, xtol=1e-12, rtol=1e-12)


def t_em_fit(design: Design | ArrayLike, y: ArrayLike, init: TModelParams | None = None, *,
             fix_nu: float | None = None, fix_omega0: float | None = None, tol: float = 1e-8,
             max_iter: int = 500, accelerate: bool = True, strict: bool = True):
    """EM for ``(beta, omega0, nu)``; returns ``(RegressionFit, TModelParams, EMTrace)``.

    ``fix_nu`` / ``fix_omega0`` hold those parameters constant. With
    ``accelerate`` each iteration applies two EM maps, a squared extrapolation
    and a stabilising EM map; the extrapolated point is kept only if it does
    not lower the likelihood, so the trace stays monotone. When the iteration
    budget runs out, ``NotConverged`` is raised with the last iterate attached
    (or returned with ``converged=False`` if ``strict`` is off).
    """
    design = as_design(design)
    X, n = design.X, design.n
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise DimensionMismatch("y length does not match design")

    if init is None:
        beta = fls_fit(design, y).beta
        r = y - X @ beta
        omega0 = float(np.median(r * r))
        if omega0 <= 0:
            omega0 = float(np.mean(r * r))
        nu = DEFAULT_NU
    else:
        beta, omega0, nu = np.asarray(init.beta, dtype=float), init.omega0, init.nu
    if fix_nu is not None:
        nu = float(fix_nu)
    if fix_omega0 is not None:
        omega0 = float(fix_omega0)
    lo, hi = nu_lower_bound(n, design.p), NU_BOUNDS[1]
    if fix_nu is None:
        nu = float(np.clip(nu, lo, hi))

    trace = EMTrace()
    r = y - X @ beta
    if omega0 <= 0 or np.max(np.abs(r)) <= 1e-12 * max(float(np.max(np.abs(y))), np.finfo(float).tiny):
        # exact interpolation: zero residuals, every E-step weight equal
        fit = RegressionFit(beta=beta, method=Method.T_MLE, weights_used=DiagonalWeights.ones(n),
                            extra={"exact_fit": True})
        trace.converged = True
        trace.loglik.append(np.inf)
        return fit, TModelParams(beta, 1.0, nu), trace

    digamma_cache: dict[float, float] = {}

    def em_map(theta):
        b, w0, v = theta
        res = y - X @ b
        den = res * res + v * w0
        w = (v + 1) / den
        nb = wls_coef(X, y, den)
        nw0 = w0 if fix_omega0 is not None else n / float(np.sum(w))
        if nw0 < 1e-12:
            raise DegenerateScale("scale estimate collapsed below 1e-12")
        nv = v
        if fix_nu is None:
            dg = digamma_cache.get(v)
            if dg is None:
                dg = digamma_cache.setdefault(v, float(digamma((v + 1) / 2)))
            sum_l = float(np.sum(np.log(den / 2))) - n * dg
            nv = _nu_update(sum_l, float(np.sum(w)), n, nw0, lo, hi)
        return nb, nw0, nv

    def loglik(theta):
        return t_loglik(y - X @ theta[0], theta[1], theta[2])

    def pack(theta):
        return np.concatenate([theta[0], [np.log(theta[1]), np.log(theta[2])]])

    def unpack(vec):
        v = float(np.clip(np.exp(vec[-1]), lo, hi)) if fix_nu is None else nu
        w0 = float(np.exp(vec[-2])) if fix_omega0 is None else omega0
        return vec[:-2], w0, v

    theta = (beta, omega0, nu)
    ll = loglik(theta)
    trace.loglik.append(ll)
    trace.params.append((beta.copy(), omega0, nu))
    for _ in range(max_iter):
        t1 = em_map(theta)
        new, new_ll = t1, None
        if accelerate:
            t2 = em_map(t1)
            p0, p1, p2 = pack(theta), pack(t1), pack(t2)
            d1, d2 = p1 - p0, p2 - 2 * p1 + p0
            nd2 = np.linalg.norm(d2)
            new, new_ll = t2, loglik(t2)
            if nd2 > 0:
                alpha = min(-1.0, -np.linalg.norm(d1) / nd2)
                try:
                    t3 = em_map(unpack(p0 - 2 * alpha * d1 + alpha * alpha * d2))
                    ll3 = loglik(t3)
                    if np.isfinite(ll3) and ll3 >= new_ll:
                        new, new_ll = t3, ll3
                except (DegenerateScale, FloatingPointError, np.linalg.LinAlgError):
                    pass
        if new_ll is None:
            new_ll = loglik(new)
        change = max(
            float(np.max(np.abs(new[0] - theta[0]))) / max(float(np.max(np.abs(theta[0]))), 1e-12),
            abs(new[1] - theta[1]) / theta[1],
            abs(new[2] - theta[2]) / theta[2],
        )
        theta, ll = new, new_ll
        trace.loglik.append(ll)
        trace.params.append((theta[0].copy(), theta[1], theta[2]))
        if change < tol:
            trace.converged = True
            break

    beta, omega0, nu = theta
    r = y - X @ beta
    weights = DiagonalWeights(r * r + nu * omega0)
    fit = RegressionFit(beta=beta, method=Method.T_MLE, weights_used=weights, iterations=trace.iterations,
                        converged=trace.converged, objective=trace.loglik[-1])
    params = TModelParams(beta, omega0, nu)
    if not trace.converged and strict:
        raise NotConverged(f"EM did not converge in {max_iter} iterations", (fit, params, trace))
    return fit, params, trace


def t_asym_cov(design_rows: Design | ArrayLike, omegas: ArrayLike, params: TModelParams) -> NDArray:
    """``V^{-1} B V^{-1}`` with ``V = sum x x'/g(w_i)`` and ``B = sum x x'/f(w_i)``."""
    design = as_design(design_rows)
    f, g = t_asym_fg(np.asarray(omegas, dtype=float), params.omega0, params.nu)
    # sandwich with weights g and middle ω' satisfying ω'/g² = 1/f
    return sandwich_cov(design, g, g * g / f)


def t_sandwich_ci(design: Design | ArrayLike, y: ArrayLike, fit: TModelParams, alpha: float = 0.05):
    """Empirical sandwich covariance of the t estimate and Wald intervals.

    Returns ``(intervals, cov)`` where ``intervals`` is ``p x 2``.
    """
    design = as_design(design)
    X = design.X
    r = np.asarray(y, dtype=float).ravel() - X @ fit.beta
    nw = fit.nu * fit.omega0
    den = (nw + r * r) ** 2
    meat_w = (fit.nu + 1) ** 2 * r * r / den
    hess_w = (fit.nu + 1) * (r * r - nw) / den
    meat = (X * meat_w[:, None]).T @ X
    hess = (X * hess_w[:, None]).T @ X
    s = np.linalg.svd(hess, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularHessian("summed Hessian is numerically singular")
    hinv = np.linalg.inv(hess)
    cov = hinv @ meat @ hinv
    cov = 0.5 * (cov + cov.T)
    z = norm.ppf(1 - alpha / 2) if alpha < 1 else 0.0
    half = z * np.sqrt(np.diag(cov))
    return np.column_stack([fit.beta - half, fit.beta + half]), cov
