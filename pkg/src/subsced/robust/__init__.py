"""Robust estimators (t likelihood, Huber) and covariance estimators."""

from .hc import HCVariant, hat_diagonal, hc_cov, homoscedastic_cov, wild_bootstrap_response
from .huber import DEFAULT_K, HuberParams, huber_asym_cov, huber_fit, huber_loss, huber_sandwich_cov
from .special import (
    ConstantKind,
    h_fn,
    huber_asym_fg,
    lemma_inv_sq_integral,
    lemma_sq_ratio_integral,
    mills_ratio,
    t_asym_fg,
    worst_case_constant,
)
from .tfit import EMTrace, TModelParams, t_asym_cov, t_em_fit, t_loglik, t_sandwich_ci, t_score

__all__ = [
    "ConstantKind", "DEFAULT_K", "EMTrace", "HCVariant", "HuberParams", "TModelParams",
    "h_fn", "hat_diagonal", "hc_cov", "homoscedastic_cov", "huber_asym_cov", "huber_asym_fg",
    "huber_fit", "huber_loss", "huber_sandwich_cov", "lemma_inv_sq_integral", "lemma_sq_ratio_integral", "mills_ratio",
    "t_asym_cov", "t_asym_fg", "t_em_fit", "t_loglik", "t_sandwich_ci", "t_score",
    "wild_bootstrap_response", "worst_case_constant",
]
