from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from subsced.grm import ScedasticFunction, grm_check
from subsced.linmodel import sandwich_cov
from subsced.robust.special import (
    h_fn,
    huber_asym_fg,
    lemma_inv_sq_integral,
    lemma_sq_ratio_integral,
    mills_ratio,
    t_asym_fg,
    worst_case_constant,
)
from subsced.robust.huber import huber_asym_cov
from subsced.robust.tfit import TModelParams, t_asym_cov

mp.mp.dps = 40


def _h_mp(x):
    x = mp.mpf(x)
    return x * mp.exp(x * x / 2) * mp.sqrt(mp.pi / 2) * mp.erfc(x / mp.sqrt(2))


def _npdf(e, w):
    return np.exp(-e * e / (2 * w)) / np.sqrt(2 * np.pi * w)


def test_h_against_high_precision():
    for x in [1e-3, 0.1, 0.5, 1, 2, 2.49, 2.51, 5, 10, 40, 100, 1e4]:
        assert h_fn(x) == pytest.approx(float(_h_mp(x)), rel=1e-14)
        one_minus = float(1 - _h_mp(x))
        assert 1 - h_fn(x) == pytest.approx(one_minus, rel=1e-12)


def test_h_quadrature_at_one():
    integral = quad(lambda z: np.exp(-z * z / 2), 1, np.inf, epsabs=1e-14)[0]
    assert abs(h_fn(1.0) - np.exp(0.5) * integral) <= 1e-10


def test_mills_ratio_no_overflow():
    assert np.isfinite(mills_ratio(1e3)) and mills_ratio(1e3) == pytest.approx(1e-3, rel=1e-5)


def test_h_bounds_and_limit():
    for x in (0.1, 1, 10, 100):
        h = h_fn(x)
        assert x * x / (x * x + 1) <= h <= (x * x + 2) / (x * x + 3)
    assert h_fn(1e6) == pytest.approx(1.0, abs=1e-11)


def test_lemma_a5_properties_on_grid():
    x = np.logspace(-3, 3, 512)
    h = h_fn(x)
    assert np.all(np.diff(h) >= -1e-15)
    assert np.all(x**2 / (x**2 + 1) <= h * (1 + 1e-14))
    assert np.all(h <= (x**2 + 2) / (x**2 + 3) * (1 + 1e-14))
    slopes = np.diff(h) / np.diff(x)
    second = np.diff(slopes) / (0.5 * (x[2:] - x[:-2]))
    assert np.all(second <= 1e-8)
    q = x**2 * (1 - h)
    assert np.all(np.diff(q) >= -1e-12)


@pytest.mark.parametrize("c", [0.1, 1.0, 10.0])
def test_lemma_integrals_against_quadrature(c):
    a = quad(lambda z: np.exp(-z * z / 2) / (c + z * z) ** 2, -np.inf, np.inf, epsabs=1e-14)[0]
    b = quad(lambda z: z * z * np.exp(-z * z / 2) / (c + z * z) ** 2, -np.inf, np.inf, epsabs=1e-14)[0]
    assert abs(lemma_inv_sq_integral(c) - a) <= 1e-8
    assert abs(lemma_sq_ratio_integral(c) - b) <= 1e-8


def test_lemma_inv_sq_at_one():
    assert lemma_inv_sq_integral(1.0) == pytest.approx(np.sqrt(np.pi / 2), rel=1e-15)


@pytest.mark.parametrize("w,w0,nu", [(2, 1, 5), (0.3, 1, 3), (50, 2, 10)])
def test_t_fg_against_quadrature(w, w0, nu):
    a = nu * w0
    inv_g = quad(lambda e: (a - e * e) / (a + e * e) ** 2 * _npdf(e, w), -np.inf, np.inf, epsabs=1e-14)[0]
    inv_f = quad(lambda e: e * e / (a + e * e) ** 2 * _npdf(e, w), -np.inf, np.inf, epsabs=1e-14)[0]
    f, g = t_asym_fg(w, w0, nu)
    assert abs(1 / g - inv_g) <= 1e-8 and abs(1 / f - inv_f) <= 1e-8


def test_t_g_small_variance_limit():
    w0, nu = 1.5, 4.0
    _, g = t_asym_fg(1e-8 * nu * w0, w0, nu)
    assert g == pytest.approx(nu * w0, rel=1e-4)


@pytest.mark.parametrize("w,k", [(4, 1), (0.5, 1.345), (10, 3)])
def test_huber_fg_against_quadrature(w, k):
    inv_g = quad(lambda e: _npdf(e, w), -k, k, epsabs=1e-14)[0]
    inv_f = (quad(lambda e: e * e * _npdf(e, w), -k, k, epsabs=1e-14)[0]
             + 2 * k * k * quad(lambda e: _npdf(e, w), k, np.inf, epsabs=1e-14)[0])
    f, g = huber_asym_fg(w, k)
    assert abs(1 / g - inv_g) <= 1e-8 and abs(1 / f - inv_f) <= 1e-8


def test_huber_small_variance_limit():
    f, g = huber_asym_fg(1e-4, 3.0)
    assert g == pytest.approx(1.0, abs=1e-12) and 1e-4 * f == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("k", [0.5, 1.345, 3.0])
def test_huber_g_grm(k):
    assert grm_check(ScedasticFunction(lambda w: huber_asym_fg(w, k)[1], "g_k")).ok


@pytest.mark.parametrize("w0,nu", [(1, 3), (1, 7), (2, 10)])
def test_t_g_grm(w0, nu):
    assert grm_check(ScedasticFunction(lambda w: t_asym_fg(w, w0, nu)[1], "g_t")).ok


TABLE_T = {0.1: 1.024994, 0.2: 1.061614, 0.5: 1.16679, 1.0: 1.313124, 5.0: 2.028271, 10.0: 2.592936}
TABLE_H = {0.1: 1.000217, 0.2: 1.005255, 0.5: 1.045128, 1.0: 1.107267, 2.0: 1.184329, 5.0: 1.286343}


def test_worst_case_table():
    for r, v in TABLE_T.items():
        assert abs(worst_case_constant("T", r) - v) <= 5e-6
    for r, v in TABLE_H.items():
        assert abs(worst_case_constant("HUBER", r) - v) <= 5e-6


def test_worst_case_monotone():
    r = np.linspace(0.1, 5, 200)
    for kind in ("T", "HUBER"):
        assert np.all(np.diff(worst_case_constant(kind, r)) > 0)


def test_t_asym_cov_examples(rng):
    w, n = 2.0, 25
    params = TModelParams([0.0], 1.0, 5.0)
    f, g = t_asym_fg(w, 1.0, 5.0)
    assert t_asym_cov(np.ones((n, 1)), np.full(n, w), params)[0, 0] == pytest.approx(g * g / (n * f))
    X = rng.standard_normal((30, 3))
    om = rng.uniform(0.2, 5, 30)
    ff, gg = t_asym_fg(om, 1.0, 5.0)
    V = X.T @ (X / gg[:, None])
    B = X.T @ (X / ff[:, None])
    expect = np.linalg.solve(V, np.linalg.solve(V, B).T)
    assert np.allclose(t_asym_cov(X, om, TModelParams(np.zeros(3), 1.0, 5.0)), expect, rtol=1e-10)


def test_corollary_bounds(rng):
    for _ in range(50):
        n, p = 40, 3
        X = rng.standard_normal((n, p))
        om = rng.uniform(0.1, 8, n)
        w0, nu = rng.uniform(0.5, 2), rng.uniform(2, 10)
        C = worst_case_constant("T", om.max() / (nu * w0))
        Ht = t_asym_cov(X, om, TModelParams(np.zeros(p), w0, nu))
        Ho = sandwich_cov(X, np.ones(n), om)
        assert np.linalg.det(Ht) <= C**p * np.linalg.det(Ho) * (1 + 1e-10)
        assert np.trace(Ht) <= C * np.trace(Ho) * (1 + 1e-10)


def test_huber_corollary_bounds(rng):
    for _ in range(50):
        n, p, k = 40, 2, rng.uniform(0.5, 2)
        X = rng.standard_normal((n, p))
        om = rng.uniform(0.1, 8, n)
        C = worst_case_constant("HUBER", om.max() / k**2)
        Hh = huber_asym_cov(X, om, k)
        Ho = sandwich_cov(X, np.ones(n), om)
        assert np.linalg.det(Hh) <= C**p * np.linalg.det(Ho) * (1 + 1e-10)
        assert np.trace(Hh) <= C * np.trace(Ho) * (1 + 1e-10)
