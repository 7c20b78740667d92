from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import norm

from subsced.errors import DimensionMismatch, LeverageOne, NonPositive, NotConverged, SingularHessian
from subsced.linmodel import Design, fls_fit
from subsced.robust.hc import hat_diagonal, hc_cov, homoscedastic_cov, wild_bootstrap_response
from subsced.robust.huber import HuberParams, huber_fit, huber_loss, huber_sandwich_cov
from subsced.robust.tfit import TModelParams, nu_lower_bound, t_em_fit, t_loglik, t_sandwich_ci, t_score


def t_data(rng, n, p=3, nu=5.0, omega0=1.0):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = np.arange(1.0, p + 1)
    w = (nu * omega0 / 2) / rng.gamma(nu / 2, size=n)
    return X, beta, X @ beta + np.sqrt(w) * rng.standard_normal(n)


# -- t model ----------------------------------------------------------------

def test_em_exact_fit():
    X = np.column_stack([np.ones(6), np.arange(6.0)])
    fit, params, trace = t_em_fit(X, X @ [2.0, -1.0])
    assert np.allclose(fit.beta, [2, -1], atol=1e-12)
    assert np.allclose(fit.weights_used.d, fit.weights_used.d[0])
    assert fit.extra.get("exact_fit")


def test_em_large_nu_is_ols(rng):
    X = np.column_stack([np.ones(500), rng.standard_normal(500)])
    y = X @ [1.0, 2.0] + rng.standard_normal(500)
    fit, _, _ = t_em_fit(X, y, fix_nu=1e4)
    assert np.max(np.abs(fit.beta - fls_fit(X, y).beta)) < 1e-3


@pytest.mark.parametrize("accelerate", [True, False])
def test_em_monotone_and_stationary(rng, accelerate):
    for _ in range(5):
        X, _, y = t_data(rng, 300)
        fit, params, trace = t_em_fit(X, y, accelerate=accelerate, max_iter=5000)
        assert trace.converged and trace.is_monotone(1e-8)
        r = y - X @ params.beta
        assert np.max(np.abs(t_score(X, r, params.omega0, params.nu))) <= 1e-6 * X.shape[0]
        assert fit.objective == pytest.approx(t_loglik(r, params.omega0, params.nu))


def test_em_acceleration_reaches_same_point(rng):
    X, _, y = t_data(rng, 400)
    _, a, _ = t_em_fit(X, y, accelerate=True, tol=1e-11, max_iter=20000)
    _, b, _ = t_em_fit(X, y, accelerate=False, tol=1e-11, max_iter=20000)
    assert np.allclose(a.beta, b.beta, atol=1e-6)
    assert a.nu == pytest.approx(b.nu, rel=1e-4) and a.omega0 == pytest.approx(b.omega0, rel=1e-4)


def test_em_fixed_parameters(rng):
    X, _, y = t_data(rng, 200)
    _, params, trace = t_em_fit(X, y, fix_nu=4.0, fix_omega0=0.7)
    assert params.nu == 4.0 and params.omega0 == 0.7
    assert trace.is_monotone()


def test_em_recovers_parameters(rng):
    nus, w0s = [], []
    for _ in range(5):
        X, beta, y = t_data(rng, 5000)
        _, params, _ = t_em_fit(X, y)
        nus.append(params.nu)
        w0s.append(params.omega0)
        assert np.max(np.abs(params.beta - beta)) < 0.1
    assert 4 <= np.mean(nus) <= 6 and 0.85 <= np.mean(w0s) <= 1.15


def test_em_not_converged_carries_result(rng):
    X, _, y = t_data(rng, 200)
    with pytest.raises(NotConverged) as err:
        t_em_fit(X, y, max_iter=1)
    fit, params, trace = err.value.result
    assert not fit.converged and trace.iterations == 1
    fit, _, _ = t_em_fit(X, y, max_iter=1, strict=False)
    assert not fit.converged


def test_em_input_errors():
    with pytest.raises(DimensionMismatch):
        t_em_fit(np.ones((5, 1)), np.ones(4))
    with pytest.raises(NonPositive):
        TModelParams([0.0], -1.0, 3.0)


def test_nu_lower_bound():
    assert nu_lower_bound(1000, 4) == pytest.approx(0.1)
    assert nu_lower_bound(100, 17) == pytest.approx(34 / 83)


def test_em_custom_init(rng):
    X, _, y = t_data(rng, 300)
    init = TModelParams(np.zeros(3), 2.0, 3.0)
    _, a, _ = t_em_fit(X, y, init=init, tol=1e-10, max_iter=5000)
    _, b, _ = t_em_fit(X, y, tol=1e-10, max_iter=5000)
    assert np.allclose(a.beta, b.beta, atol=1e-5)


def test_sandwich_ci_alpha_one(rng):
    X, _, y = t_data(rng, 200)
    _, params, _ = t_em_fit(X, y, fix_nu=7.0)
    ci, cov = t_sandwich_ci(X, y, params, alpha=1.0)
    assert np.allclose(ci[:, 0], params.beta) and np.allclose(ci[:, 1], params.beta)
    assert np.allclose(cov, cov.T)


def test_sandwich_ci_singular():
    # every squared residual equals nu * omega0, so the summed Hessian vanishes
    X = np.ones((4, 1))
    y = np.array([1.0, -1.0, 1.0, -1.0])
    with pytest.raises(SingularHessian):
        t_sandwich_ci(X, y, TModelParams([0.0], 1.0, 1.0))


def test_sandwich_ci_coverage():
    rng = np.random.default_rng(2024)
    hits = []
    for _ in range(500):
        X, beta, y = t_data(rng, 2000)
        _, params, _ = t_em_fit(X, y, fix_nu=5.0)
        ci, _ = t_sandwich_ci(X, y, params, 0.05)
        hits.append((ci[:, 0] <= beta) & (beta <= ci[:, 1]))
    cov = np.mean(hits, axis=0)
    assert np.all(np.abs(cov - 0.95) <= 0.02)


# -- Huber ------------------------------------------------------------------

def test_huber_quadratic_regime_is_ols(rng):
    X = np.column_stack([np.ones(50), rng.standard_normal(50)])
    y = X @ [1.0, 2.0] + 0.01 * rng.standard_normal(50)
    fit = huber_fit(X, y, HuberParams(1.0))
    assert np.max(np.abs(fit.beta - fls_fit(X, y).beta)) < 1e-12


def test_huber_median_limit():
    y = np.array([3.0, -1.0, 7.0, 2.0, 5.0, 11.0, 4.0, 9.0, 6.0])
    fit = huber_fit(np.ones((9, 1)), y, HuberParams(1e-9))
    assert fit.beta[0] == pytest.approx(np.median(y), abs=1e-6)


def test_huber_bounded_influence(rng):
    X = np.column_stack([np.ones(30), rng.standard_normal(30)])
    c = np.array([0.5, -1.5])
    k = 1.345
    shifts = []
    for size in (1e3, 1e6):
        y = X @ c
        y[3] += size
        shifts.append(huber_fit(X, y, HuberParams(k)).beta - c)
    assert np.allclose(shifts[0], shifts[1], atol=1e-8)
    rest = np.delete(X, 3, axis=0)
    expect = np.linalg.solve(rest.T @ rest, k * X[3])
    assert np.allclose(shifts[0], expect, atol=1e-8)


def test_huber_loss_and_errors(rng):
    assert np.allclose(huber_loss([0.5, -3.0], 1.0), [0.125, 2.5])
    with pytest.raises(NonPositive):
        HuberParams(0.0)
    X = np.column_stack([np.ones(30), rng.standard_normal(30)])
    y = X @ [1.0, 1.0] + rng.standard_t(2, 30)
    with pytest.raises(NotConverged):
        huber_fit(X, y, max_iter=1)
    fit = huber_fit(X, y)
    cov = huber_sandwich_cov(X, y - X @ fit.beta, 1.345)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


# -- HC ---------------------------------------------------------------------

def test_hc_examples(rng):
    X1 = np.ones((4, 1))
    e = np.array([1.0, -1.0, 2.0, -2.0])
    assert hc_cov(X1, e, "HC0")[0, 0] == pytest.approx(0.625)
    assert homoscedastic_cov(X1, e)[0, 0] == pytest.approx(10 / 3 / 4)
    assert np.allclose(homoscedastic_cov(X1, np.zeros(4)), 0)
    X = rng.standard_normal((20, 3))
    e = rng.standard_normal(20)
    assert np.allclose(hc_cov(X, e, "HC1"), hc_cov(X, e, "HC0") * 20 / 17)
    XtXi = np.linalg.inv(X.T @ X)
    h = hat_diagonal(X)
    for v, c in (("HC2", 1 / (1 - h)), ("HC3", 1 / (1 - h) ** 2)):
        expect = XtXi @ X.T @ np.diag(c * e * e) @ X @ XtXi
        assert np.allclose(hc_cov(X, e, v), expect, rtol=1e-10)
    s = np.where(rng.random(20) < 0.5, -0.3, 0.3)
    assert np.allclose(hc_cov(X, s, "HC0"), 0.09 * XtXi)


def test_hc_leverage_one():
    X = np.column_stack([np.ones(4), [0, 0, 0, 1.0]])
    with pytest.raises(LeverageOne):
        hc_cov(X, np.ones(4), "HC3")


def test_wild_bootstrap_response():
    y = wild_bootstrap_response([1.0, 2.0], [0.5, -0.5], [0.75, 0.0], [1.0, -1.0])
    assert np.allclose(y, [2.0, 2.5])
    assert np.allclose(wild_bootstrap_response([1.0], [0.0], [0.5], [3.0]), [1.0])
