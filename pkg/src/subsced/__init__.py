"""Weighted least squares under unknown heteroscedasticity.

Submodules: ``linmodel`` (estimators and exact covariances), ``subscedastic``
(certifying weights never lose to OLS), ``grm`` (scedastic functions),
``weightdesign`` (weight constructions), ``robust`` (t and Huber fits,
HC covariances), ``simharness`` (seeded Monte Carlo) and ``cli``.
"""

from __future__ import annotations

from .errors import SubscedError
from .linmodel import Design, DiagonalWeights, FullCovariance, Method, RegressionFit, fls_fit, sandwich_cov, sgv
from .subscedastic import SubscedasticCertificate, brute_force_excess, certify, certify_simultaneous

__version__ = "0.1.0"

__all__ = [
    "Design",
    "DiagonalWeights",
    "FullCovariance",
    "Method",
    "RegressionFit",
    "SubscedError",
    "SubscedasticCertificate",
    "brute_force_excess",
    "certify",
    "certify_simultaneous",
    "fls_fit",
    "sandwich_cov",
    "sgv",
]
