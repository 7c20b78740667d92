"""Scalar scedastic functions and the growth-rate monotonicity (GRM) property.

A function ``g`` on the positive reals satisfies GRM when ``g`` is
non-decreasing and ``g(w)/w`` is non-increasing. Applying such a ``g``
entrywise to the true variances always yields subscedastic weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import BadOrdering, DimensionMismatch, GRMViolation, NonPositive, NonPositiveValue
from .linmodel import DiagonalWeights, as_weights

__all__ = [
    "GRMResult",
    "ScedasticFunction",
    "bounded_transform",
    "compose",
    "constant",
    "default_grid",
    "grm_check",
    "grm_to_subscedastic",
    "huber_window",
    "identity",
    "log_shift",
    "majorization_check",
    "power",
    "random_grm_function",
    "t_scale",
    "translate",
]

GRID_LO, GRID_HI, GRID_SIZE = 1e-4, 1e4, 512
REL_SLACK = 1e-12


@dataclass(frozen=True)
class ScedasticFunction:
    """Vectorised map from positive reals to positive reals."""

    fn: Callable[[NDArray], NDArray]
    label: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __call__(self, omega: ArrayLike) -> NDArray:
        w = np.asarray(omega, dtype=float)
        return np.asarray(self.fn(w), dtype=float) * np.ones_like(w)

    def eval(self, omega: ArrayLike) -> NDArray:
        return self(omega)

    def __repr__(self) -> str:
        ps = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"ScedasticFunction({self.label}{'; ' + ps if ps else ''})"


@dataclass(frozen=True)
class GRMResult:
    ok: bool
    # first offending consecutive grid pair (w_lo, w_hi) and which condition failed
    violation: tuple[float, float] | None = None
    condition: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def default_grid(lo: float = GRID_LO, hi: float = GRID_HI, size: int = GRID_SIZE) -> NDArray:
    return np.geomspace(lo, hi, size)


def _validate_grid(grid: ArrayLike) -> NDArray:
    g = np.asarray(grid, dtype=float).ravel()
    if g.size < 64:
        raise DimensionMismatch("GRM grid needs at least 64 points")
    if np.any(g <= 0):
        raise NonPositive("GRM grid must be positive")
    if np.any(np.diff(g) <= 0):
        raise BadOrdering("GRM grid must be strictly increasing")
    return g


def grm_check(f: ScedasticFunction, grid: ArrayLike | None = None) -> GRMResult:
    """Check both GRM conditions between consecutive grid points."""
    w = default_grid() if grid is None else _validate_grid(grid)
    v = f(w)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        bad = int(np.flatnonzero(~(v > 0))[0])
        raise NonPositiveValue(f"{f.label} is not positive at omega={w[bad]:g}")
    up = v[1:] < v[:-1] * (1 - REL_SLACK)
    r = v / w
    down = r[1:] > r[:-1] * (1 + REL_SLACK)
    bad = np.flatnonzero(up | down)
    if bad.size == 0:
        return GRMResult(True)
    k = int(bad[0])
    return GRMResult(False, (float(w[k]), float(w[k + 1])),
                     "non-decreasing" if up[k] else "ratio non-increasing")


def _require_grm(g: ScedasticFunction, grid: NDArray | None = None) -> None:
    res = grm_check(g, grid)
    if not res:
        raise GRMViolation(f"{g.label} fails GRM ({res.condition}) on {res.violation}")


# -- function library -------------------------------------------------------

def identity() -> ScedasticFunction:
    return ScedasticFunction(lambda w: w, "identity")


def constant(c: float = 1.0) -> ScedasticFunction:
    return ScedasticFunction(lambda w: np.full_like(w, c), "constant", {"c": c})


def power(q: float) -> ScedasticFunction:
    """``w ** (1/q)``; GRM for q >= 1."""
    return ScedasticFunction(lambda w: w ** (1.0 / q), "power", {"q": q})


def translate(g: ScedasticFunction, c: float) -> ScedasticFunction:
    return ScedasticFunction(lambda w: g(w) + c, f"{g.label}+c", {**g.params, "c": c})


def log_shift(lam: float) -> ScedasticFunction:
    """``log(w + lam)``; GRM for lam > 1."""
    return ScedasticFunction(lambda w: np.log(w + lam), "log_shift", {"lam": lam})


def compose(outer: ScedasticFunction, inner: ScedasticFunction) -> ScedasticFunction:
    return ScedasticFunction(lambda w: outer(inner(w)), f"{outer.label}o{inner.label}",
                             {**inner.params, **outer.params})


def huber_window(k: float = 1.0) -> ScedasticFunction:
    """``sqrt(w) / int_{-k}^{k} exp(-z^2 / 2w) dz``, written via erf."""
    from scipy.special import erf

    def fn(w):
        return 1.0 / (np.sqrt(2 * np.pi) * erf(k / np.sqrt(2 * w)))

    return ScedasticFunction(fn, "huber_window", {"k": k})


def t_scale(omega0: float = 1.0, nu: float = 1.0) -> ScedasticFunction:
    """Limiting weight function of the t-likelihood estimate."""
    from .robust.special import t_asym_fg

    return ScedasticFunction(lambda w: t_asym_fg(w, omega0, nu)[1], "t_scale",
                             {"omega0": omega0, "nu": nu})


def bounded_transform(g: ScedasticFunction, lam: float, gamma: float,
                      grid: ArrayLike | None = None) -> ScedasticFunction:
    """``1 / (1/g + lam) + gamma``, bounded in ``[gamma, gamma + 1/lam]``."""
    if lam < 0 or gamma < 0:
        raise NonPositive("lam and gamma must be non-negative")
    _require_grm(g, None if grid is None else _validate_grid(grid))

    def fn(w):
        return 1.0 / (1.0 / g(w) + lam) + gamma

    return ScedasticFunction(fn, f"bounded({g.label})", {**g.params, "lam": lam, "gamma": gamma})


def random_grm_function(rng: np.random.Generator) -> ScedasticFunction:
    """Draw a GRM function from the library with random parameters."""
    kind = rng.integers(7)
    if kind == 0:
        g = power(rng.uniform(1.0, 6.0))
    elif kind == 1:
        g = translate(identity(), rng.uniform(0.01, 10.0))
    elif kind == 2:
        g = log_shift(rng.uniform(1.05, 10.0))
    elif kind == 3:
        g = huber_window(rng.uniform(0.3, 3.0))
    elif kind == 4:
        g = t_scale(rng.uniform(0.2, 5.0), rng.uniform(0.5, 30.0))
    elif kind == 5:
        g = bounded_transform(power(rng.uniform(1.0, 4.0)), rng.uniform(0, 2), rng.uniform(0, 2))
    else:
        g = compose(power(rng.uniform(1.0, 3.0)), translate(identity(), rng.uniform(0.0, 5.0)))
    return g


# -- consequences of GRM ----------------------------------------------------

def majorization_check(g: ScedasticFunction, omega: ArrayLike) -> bool:
    """Is ``g(omega)/sum`` majorized by ``omega/sum``?"""
    w = np.asarray(omega, dtype=float).ravel()
    if np.any(w <= 0):
        raise NonPositive("omega must be positive")
    gw = g(w)
    a = np.sort(gw / gw.sum())[::-1]
    b = np.sort(w / w.sum())[::-1]
    return bool(np.all(np.cumsum(a) <= np.cumsum(b) + 1e-12))


def grm_to_subscedastic(g: ScedasticFunction, truth: DiagonalWeights | ArrayLike) -> DiagonalWeights:
    """Entrywise ``g(omega_i)``, after checking GRM over a grid covering the data."""
    om = as_weights(truth).d
    lo, hi = min(GRID_LO, om.min()), max(GRID_HI, om.max())
    grid = np.union1d(default_grid(lo, hi), om)
    _require_grm(g, grid)
    return DiagonalWeights(g(om))
