"""Special functions behind the limiting covariances of the t and Huber estimates.

``h(x) = x * R(x)`` where ``R(x) = exp(x^2/2) * int_x^inf exp(-z^2/2) dz`` is the
Mills ratio. For moderate and large ``x`` the quantities ``1 - h`` and
``(1 + 1/x^2) h - 1`` cancel catastrophically, so they are evaluated from the
continued fraction of ``R`` instead of by subtraction.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import erf, erfc, erfcx

__all__ = [
    "ConstantKind",
    "h_fn",
    "huber_asym_fg",
    "lemma_inv_sq_integral",
    "lemma_sq_ratio_integral",
    "mills_ratio",
    "t_asym_fg",
    "worst_case_constant",
]

_SQRT_PI_2 = np.sqrt(np.pi / 2)
_CF_SWITCH = 2.5
_CF_TERMS = 300


def mills_ratio(x: ArrayLike) -> NDArray:
    """``exp(x^2/2) * int_x^inf exp(-z^2/2) dz`` without overflow."""
    return _SQRT_PI_2 * erfcx(np.asarray(x, dtype=float) / np.sqrt(2))


def _cf_tails(x: NDArray) -> tuple[NDArray, NDArray]:
    """Tails T = CF_1 and S = CF_2 of R(x) = 1/(x + CF_1), CF_k = k/(x + CF_{k+1})."""
    cf = np.zeros_like(x)
    for k in range(_CF_TERMS, 2, -1):
        cf = k / (x + cf)
    s = 2.0 / (x + cf)
    t = 1.0 / (x + s)
    return t, s


def _one_minus_h_and_excess(x: NDArray) -> tuple[NDArray, NDArray]:
    """Return ``1 - h(x)`` and ``(1 + 1/x^2) h(x) - 1``."""
    x = np.asarray(x, dtype=float)
    one_minus_h = np.empty_like(x)
    excess = np.empty_like(x)
    lo = x < _CF_SWITCH
    if np.any(lo):
        xl = x[lo]
        h = xl * mills_ratio(xl)
        one_minus_h[lo] = 1.0 - h
        excess[lo] = (1.0 + 1.0 / xl**2) * h - 1.0
    hi = ~lo
    if np.any(hi):
        xh = x[hi]
        t, s = _cf_tails(xh)
        r = 1.0 / (xh + t)
        one_minus_h[hi] = t * r
        excess[hi] = r * s * t / xh
    return one_minus_h, excess


def h_fn(x: ArrayLike) -> NDArray | float:
    """``h(x) = x * exp(x^2/2) * int_x^inf exp(-z^2/2) dz`` for x > 0; lies in (0, 1)."""
    xa = np.asarray(x, dtype=float)
    out = 1.0 - _one_minus_h_and_excess(np.atleast_1d(xa))[0]
    return float(out[0]) if xa.ndim == 0 else out.reshape(xa.shape)


def _scalarize(xa: NDArray, *arrs: NDArray):
    if xa.ndim == 0:
        return tuple(float(a.ravel()[0]) for a in arrs)
    return tuple(a.reshape(xa.shape) for a in arrs)


def t_asym_fg(omega: ArrayLike, omega0: float, nu: float):
    """Return ``(f, g)`` of the limiting t-likelihood sandwich at variance ``omega``.

    The t estimate behaves like weighted least squares with weights ``1/g``,
    while ``1/f`` is the per-observation score variance.
    """
    w = np.asarray(omega, dtype=float)
    wb = np.atleast_1d(w)
    x = np.sqrt(nu * omega0 / wb)
    one_minus_h, excess = _one_minus_h_and_excess(x)
    g = wb / one_minus_h
    f = 2.0 * wb / excess
    return _scalarize(w, f, g)


def huber_asym_fg(omega: ArrayLike, k: float):
    """Return ``(f, g)`` for the Huber estimate with threshold ``k`` at variance ``omega``.

    ``1/g = P(|e| < k)`` and ``1/f = E[psi_k(e)^2]`` for ``e ~ N(0, omega)``.
    """
    w = np.asarray(omega, dtype=float)
    wb = np.atleast_1d(w)
    a = k / np.sqrt(wb)
    p_in = erf(a / np.sqrt(2))
    p_out = erfc(a / np.sqrt(2))
    dens = np.exp(-0.5 * a * a) / np.sqrt(2 * np.pi)
    # truncated second moment of N(0, omega) on [-k, k] plus the clipped tails
    e_psi2 = wb * (p_in - 2 * a * dens) + k * k * p_out
    return _scalarize(w, 1.0 / e_psi2, 1.0 / p_in)


class ConstantKind(str, Enum):
    T = "T"
    HUBER = "HUBER"


def worst_case_constant(kind: ConstantKind | str, ratio: ArrayLike):
    """``g(w)^2 / (w f(w))`` at ``w / (nu*omega0) = ratio`` (t) or ``w / k^2 = ratio`` (Huber).

    The constant depends on its inputs only through ``ratio``.
    """
    kind = ConstantKind(kind)
    r = np.asarray(ratio, dtype=float)
    rb = np.atleast_1d(r)
    if kind is ConstantKind.T:
        one_minus_h, excess = _one_minus_h_and_excess(np.sqrt(1.0 / rb))
        c = excess / (2.0 * one_minus_h**2)
    else:
        f, g = huber_asym_fg(rb, 1.0)
        c = g * g / (rb * f)
    return _scalarize(r, c)[0]


def lemma_inv_sq_integral(c: ArrayLike):
    """Closed form of ``int (c + z^2)^-2 exp(-z^2/2) dz`` over the real line."""
    c = np.asarray(c, dtype=float)
    return _SQRT_PI_2 / c + np.pi * (1 - c) / (2 * c**1.5) * erfcx(np.sqrt(c / 2))


def lemma_sq_ratio_integral(c: ArrayLike):
    """Closed form of ``int z^2 (c + z^2)^-2 exp(-z^2/2) dz`` over the real line."""
    c = np.asarray(c, dtype=float)
    return 0.5 * (np.pi * (np.sqrt(c) + 1 / np.sqrt(c)) * erfcx(np.sqrt(c / 2)) - np.sqrt(2 * np.pi))
