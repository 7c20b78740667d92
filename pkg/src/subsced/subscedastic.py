"""Certification of subscedastic weights.

Candidate variances ``omega_tilde`` are subscedastic for true variances
``omega`` when every FLS estimate built from them has generalized (and total)
variance no larger than OLS, for every design. The pairwise test is

    1 <= omega_tilde_i / omega_tilde_j <= 2 * omega_i / omega_j - 1
    for every ordered pair with omega_i >= omega_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DimensionMismatch,
    LengthMismatch,
    NonPositive,
    NotSimultaneouslyDiagonalizable,
)
from .linmodel import (
    Design,
    DiagonalWeights,
    FullCovariance,
    as_design,
    as_weights,
    sandwich_cov,
)

__all__ = [
    "PropertyReport",
    "SubscedasticCertificate",
    "brute_force_excess",
    "certify",
    "certify_simultaneous",
    "pair_excess_cubic",
    "relative_trace_excess",
    "set_properties_check",
    "trace_criterion_excess",
    "w_set_monotonicity_check",
    "witness_design",
]

TOL = 1e-12
SIMDIAG_TOL = 1e-8


@dataclass(frozen=True)
class SubscedasticCertificate:
    """Verdict of the pairwise test.

    ``witness`` is the 0-based index pair ``(i, j)`` (``omega_i >= omega_j``)
    with the most negative margin; ``witness_vector`` is an optional unit
    vector ``u`` with ``k(u) > 0``.
    """

    verdict: bool
    margin: float
    witness: tuple[int, int] | None = None
    witness_vector: NDArray | None = None

    def __bool__(self) -> bool:
        return self.verdict

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict, "margin": self.margin,
               "witness": None if self.witness is None else list(self.witness)}
        if self.witness_vector is not None:
            out["witness_vector"] = self.witness_vector.tolist()
        return out


def _pair_inputs(candidate, truth) -> tuple[NDArray, NDArray]:
    c = np.asarray(candidate.d if isinstance(candidate, DiagonalWeights) else candidate, dtype=float).ravel()
    t = np.asarray(truth.d if isinstance(truth, DiagonalWeights) else truth, dtype=float).ravel()
    if c.size != t.size:
        raise LengthMismatch(f"candidate has length {c.size}, truth has length {t.size}")
    if c.size < 2:
        raise DimensionMismatch("need n >= 2")
    if np.any(~(c > 0)) or np.any(~(t > 0)) or not (np.all(np.isfinite(c)) and np.all(np.isfinite(t))):
        raise NonPositive("candidate and truth entries must be finite and positive")
    return c, t


def certify(candidate: DiagonalWeights | ArrayLike, truth: DiagonalWeights | ArrayLike) -> SubscedasticCertificate:
    """Literal O(n^2) scan of the pairwise condition.

    The verdict does not depend on the number of regressors, so none is taken.
    Tied true variances force the candidate ratio to 1.
    """
    c, t = _pair_inputs(candidate, truth)
    # rows index i, columns index j; only pairs with omega_i >= omega_j count
    cr = c[:, None] / c[None, :]
    tr = t[:, None] / t[None, :]
    active = t[:, None] >= t[None, :]
    np.fill_diagonal(active, False)
    m = np.minimum(cr - 1.0, 2.0 * tr - 1.0 - cr)
    m = np.where(active, m, np.inf)
    flat = int(np.argmin(m))
    margin = float(m.flat[flat])
    verdict = margin >= -TOL
    witness = None if verdict else tuple(int(v) for v in np.unravel_index(flat, m.shape))
    return SubscedasticCertificate(verdict, margin, witness)


def certify_simultaneous(candidate: FullCovariance, truth: FullCovariance) -> SubscedasticCertificate:
    """Apply :func:`certify` to the spectra of two commuting covariances.

    A common eigenbasis is taken from a generic linear combination of the two
    matrices; both must be diagonal in it to within ``1e-8`` relative.
    """
    A, B = truth.V, candidate.V
    if A.shape != B.shape:
        raise LengthMismatch("matrices differ in size")
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    for mix in (0.6180339887498949, 2.718281828459045, 0.1414213562373095):
        _, Q = np.linalg.eigh(A / na + mix * B / nb)
        DA, DB = Q.T @ A @ Q, Q.T @ B @ Q
        offa = np.abs(DA - np.diag(np.diag(DA))).max() / na
        offb = np.abs(DB - np.diag(np.diag(DB))).max() / nb
        if max(offa, offb) <= SIMDIAG_TOL:
            return certify(np.diag(DB), np.diag(DA))
    raise NotSimultaneouslyDiagonalizable("candidate and truth do not share an eigenbasis")


# -- brute-force oracle ------------------------------------------------------

def pair_excess_cubic(phi_i: float, phi_j: float, w_i: float, w_j: float) -> np.polynomial.Polynomial:
    """``k(u)`` restricted to ``u = sqrt(t) e_i + sqrt(1-t) e_j`` as a cubic in ``t``.

    ``k(u) = u' P W P u - (u' P u)^2 (u' W u)`` with ``P = diag(phi)``.
    """
    T = np.polynomial.Polynomial([0.0, 1.0])
    one = np.polynomial.Polynomial([1.0])
    a = phi_i**2 * w_i * T + phi_j**2 * w_j * (one - T)
    b = phi_i * T + phi_j * (one - T)
    c = w_i * T + w_j * (one - T)
    return a - b * b * c


def _third_root(phi_i, phi_j, w_i, w_j) -> float | None:
    den = (phi_i - phi_j) * (w_i - w_j)
    if den == 0:
        return None
    return (2 * phi_j * w_j - (phi_i + phi_j) * w_i) / den


def brute_force_excess(candidate: DiagonalWeights | ArrayLike, truth: DiagonalWeights | ArrayLike,
                       grid: int = 4096) -> tuple[float, NDArray]:
    """Maximise ``k(u)`` over two-sparse unit vectors.

    Inputs are rescaled to unit maximum first; this does not change the sign
    of ``k`` or its maximiser. Returns ``(max k, maximising u)``.
    """
    c, t = _pair_inputs(candidate, truth)
    phi = c.min() / c
    w = t / t.max()
    n = c.size
    ts = np.linspace(0.0, 1.0, grid)
    best, best_u = -np.inf, None
    for i in range(n):
        for j in range(i + 1, n):
            poly = pair_excess_cubic(phi[i], phi[j], w[i], w[j])
            cand = [ts]
            stat = poly.deriv().roots()
            stat = stat[np.abs(stat.imag) < 1e-12].real
            cand.append(stat[(stat > 0) & (stat < 1)])
            r3 = _third_root(phi[i], phi[j], w[i], w[j])
            if r3 is not None and 0 < r3 < 1:
                cand.append(np.array([r3]))
            pts = np.concatenate(cand)
            vals = poly(pts)
            k = int(np.argmax(vals))
            if vals[k] > best:
                best = float(vals[k])
                u = np.zeros(n)
                u[i], u[j] = np.sqrt(pts[k]), np.sqrt(1.0 - pts[k])
                best_u = u
    return best, best_u


def witness_design(u: ArrayLike, p: int) -> Design:
    """Design whose first column is ``u`` and whose other ``p-1`` columns are
    standard basis vectors outside the support of ``u``."""
    u = np.asarray(u, dtype=float)
    n = u.size
    support = set(np.flatnonzero(u).tolist())
    free = [k for k in range(n) if k not in support]
    if p - 1 > len(free):
        raise DimensionMismatch("not enough free coordinates for the requested p")
    X = np.zeros((n, p))
    X[:, 0] = u
    for col, k in enumerate(free[: p - 1], start=1):
        X[k, col] = 1.0
    return Design(X)


# -- trace-based criteria ---------------------------------------------------

def trace_criterion_excess(candidate, truth, design: Design | ArrayLike) -> float:
    """``trace H(candidate, truth) - trace H(I, truth)`` for the given design."""
    design = as_design(design)
    truth = as_weights(truth)
    h = sandwich_cov(design, candidate, truth)
    h0 = sandwich_cov(design, DiagonalWeights.ones(design.n), truth)
    return float(np.trace(h) - np.trace(h0))


def relative_trace_excess(candidate, truth, design: Design | ArrayLike) -> float:
    """Exploratory: ``trace(H(candidate, truth) H(I, truth)^{-1}) / p - 1``.

    Not known to characterize subscedasticity; reported only.
    """
    design = as_design(design)
    truth = as_weights(truth)
    h = sandwich_cov(design, candidate, truth)
    h0 = sandwich_cov(design, DiagonalWeights.ones(design.n), truth)
    return float(np.trace(np.linalg.solve(h0, h)) / design.p - 1.0)


# -- closure properties -----------------------------------------------------

@dataclass
class PropertyReport:
    samples: int
    failures: dict[str, int] = field(default_factory=lambda: {
        "convex": 0, "cone": 0, "inverse": 0, "regularization": 0})
    checks: dict[str, int] = field(default_factory=lambda: {
        "convex": 0, "cone": 0, "inverse": 0, "regularization": 0})

    @property
    def total_failures(self) -> int:
        return sum(self.failures.values())

    def to_dict(self) -> dict:
        return {"samples": self.samples, "failures": dict(self.failures), "checks": dict(self.checks)}


def _closure_checks(report: PropertyReport, a: NDArray, b: NDArray, t: NDArray) -> None:
    def tally(name, cand, truth):
        report.checks[name] += 1
        if not certify(cand, truth).verdict:
            report.failures[name] += 1

    for s in (0.25, 0.5, 0.75):
        tally("convex", s * a + (1 - s) * b, t)
    for s in (1e-3, 1e3):
        tally("cone", s * a, t)
    tally("inverse", 1.0 / a, 1.0 / t)
    for s in (0.1, 10.0):
        tally("regularization", a + s, t)


def set_properties_check(truth: DiagonalWeights | ArrayLike, samples: int, seed=None,
                         members: list[ArrayLike] | None = None) -> PropertyReport:
    """Check convexity, cone, symmetric-inverse and regularization closure.

    Members are drawn by applying random GRM functions to ``truth``; extra
    known members may be passed via ``members``.
    """
    from .grm import grm_to_subscedastic, random_grm_function

    t = as_weights(truth).d
    rng = np.random.default_rng(seed)
    pool = [np.asarray(m, dtype=float) for m in (members or [])]
    report = PropertyReport(samples)
    for _ in range(samples):
        a = grm_to_subscedastic(random_grm_function(rng), t).d
        b = grm_to_subscedastic(random_grm_function(rng), t).d
        _closure_checks(report, a, b, t)
    for a in pool:
        _closure_checks(report, a, a, t)
    return report


def w_set_monotonicity_check(candidate: DiagonalWeights | ArrayLike, truths, s: float) -> tuple[int, int]:
    """Count truths accepted for ``candidate`` but rejected for ``candidate + s``.

    Returns ``(accepted, violations)``; the second entry should be zero.
    """
    c = as_weights(candidate).d
    accepted = violations = 0
    for t in truths:
        if certify(c, t).verdict:
            accepted += 1
            if not certify(c + s, t).verdict:
                violations += 1
    return accepted, violations
