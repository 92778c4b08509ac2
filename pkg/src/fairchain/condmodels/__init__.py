"""Conditional models F(x | design) for continuous, binary and count variables."""

from .design import DesignLayout, DesignMatrix, Term, intercept_only, linear_predictor
from .fit import (
    COUNT_FAMILIES,
    fit,
    observed_information,
    select_count_model,
    standard_errors,
)
from .likelihood import FAMILIES, loglik, score
from .model import (
    CONTINUOUS_FAMILIES,
    DISCRETE_FAMILIES,
    ConditionalModel,
    conditional_cdf,
    conditional_quantile,
    count_pmf,
    count_truncation_point,
    discrete_cdf_pair,
    discrete_cdf_pairs,
)

__all__ = [
    "COUNT_FAMILIES",
    "CONTINUOUS_FAMILIES",
    "DISCRETE_FAMILIES",
    "FAMILIES",
    "ConditionalModel",
    "DesignLayout",
    "DesignMatrix",
    "Term",
    "conditional_cdf",
    "conditional_quantile",
    "count_pmf",
    "count_truncation_point",
    "discrete_cdf_pair",
    "discrete_cdf_pairs",
    "fit",
    "intercept_only",
    "linear_predictor",
    "loglik",
    "observed_information",
    "score",
    "select_count_model",
    "standard_errors",
]
