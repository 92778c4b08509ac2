"""Log-likelihoods and analytic scores for every conditional family.

Parameter vectors are laid out as::

    gaussian_linear, linear_residual_ecdf   [beta (p), log sigma]
    logistic, poisson                       [beta (p)]
    negbin                                  [beta (p), log theta]
    zip                                     [beta (p), gamma (p)]
    zinb                                    [beta (p), gamma (p), log theta]

``beta`` is the mean (log-link for counts, logit for logistic) coefficient
vector and ``gamma`` the logit coefficients of the structural-zero
probability. All functions accept optional per-row weights.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln


FAMILIES = (
    "linear_residual_ecdf",
    "gaussian_linear",
    "logistic",
    "poisson",
    "negbin",
    "zip",
    "zinb",
)
_LOG_2PI = np.log(2.0 * np.pi)


def n_params(family: str, p: int) -> int:
    return {
        "linear_residual_ecdf": p + 1,
        "gaussian_linear": p + 1,
        "logistic": p,
        "poisson": p,
        "negbin": p + 1,
        "zip": 2 * p,
        "zinb": 2 * p + 1,
    }[family]


def split_params(family: str, params: np.ndarray, p: int):
    """Return (beta, gamma or None, log-dispersion or None)."""
    params = np.asarray(params, dtype=np.float64)
    beta = params[:p]
    gamma = params[p : 2 * p] if family in ("zip", "zinb") else None
    if family in ("gaussian_linear", "linear_residual_ecdf", "negbin"):
        return beta, None, params[p]
    if family == "zinb":
        return beta, gamma, params[2 * p]
    return beta, gamma, None


def softplus(x):
    return np.logaddexp(0.0, x)


def _rising_log_terms(y: np.ndarray, theta: float):
    """sum_{k<y} log(theta+k), 1/(theta+k) and 1/(theta+k)^2 for integer y.

    Exact replacements for lgamma(y+theta) - lgamma(theta) and its
    derivatives; they stay accurate when theta is very large.
    """
    yi = y.astype(np.int64)
    top = int(yi.max()) if yi.size else 0
    k = np.arange(top, dtype=np.float64)
    tk = theta + k
    # a line search may probe tiny theta; the resulting inf is rejected there
    with np.errstate(over="ignore", divide="ignore"):
        inv = 1.0 / tk
        c_log = np.concatenate(([0.0], np.cumsum(np.log(tk))))
        c_inv = np.concatenate(([0.0], np.cumsum(inv)))
        c_inv2 = np.concatenate(([0.0], np.cumsum(inv * inv)))
    return c_log[yi], c_inv[yi], c_inv2[yi]


def count_logpmf(family: str, y, eta, log_theta=None):
    """Log pmf of the count component (poisson or negbin) and its eta/log-theta derivatives."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.exp(eta)
    if family == "poisson":
        logf = y * eta - mu - gammaln(y + 1.0)
        return logf, y - mu, None
    # a line search may probe log_theta past overflow; the non-finite
    # likelihood that results is rejected there
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        theta = float(np.exp(log_theta))
        lr, dig, _ = _rising_log_terms(y, theta)
        log_ratio = -np.log1p(mu / theta)  # log(theta / (theta + mu))
        logf = lr - gammaln(y + 1.0) + theta * log_ratio + y * (eta - np.log(theta + mu))
        d_eta = (y - mu) * theta / (theta + mu)
        d_log_theta = theta * (dig + log_ratio + (mu - y) / (theta + mu))
    return logf, d_eta, d_log_theta


def negbin_hessian(params, y, X, weights=None) -> np.ndarray:
    """Analytic Hessian of the (weighted) negbin log-likelihood in (beta, log theta)."""
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    wt = _weights(weights, X.shape[0])
    beta, _, tau = split_params("negbin", params, p)
    theta = float(np.exp(tau))
    mu = np.exp(X @ beta)
    _, dig, trig = _rising_log_terms(y, theta)
    tm = theta + mu
    d2_eta = -mu * theta * (y + theta) / tm**2
    d_eta_tau = theta * (y - mu) * mu / tm**2
    d_theta = dig - np.log1p(mu / theta) + (mu - y) / tm
    d2_theta = -trig + 1.0 / theta - 1.0 / tm - (mu - y) / tm**2
    d2_tau = theta**2 * d2_theta + theta * d_theta
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = (X.T * (wt * d2_eta)) @ X
    H[:p, p] = H[p, :p] = X.T @ (wt * d_eta_tau)
    H[p, p] = np.dot(wt, d2_tau)
    return H


def _weights(w, n):
    return np.ones(n) if w is None else np.asarray(w, dtype=np.float64)


def _zi_parts(family, params, y, X):
    p = X.shape[1]
    beta, gamma, log_theta = split_params(family, params, p)
    count = "poisson" if family == "zip" else "negbin"
    eta = X @ beta
    zeta = X @ gamma
    logf, d_eta, d_tau = count_logpmf(count, y, eta, log_theta)
    zero = y == 0
    # log P(y) for the mixture; zeros mix structural and sampling zeros
    ll = np.where(zero, np.logaddexp(zeta, logf), logf) - softplus(zeta)
    # posterior probability that a zero is structural
    w = np.where(zero, expit(zeta - logf), 0.0)
    return ll, w, zeta, d_eta, d_tau


def loglik_terms(family: str, params, y, X) -> np.ndarray:
    """Per-row log-likelihood contributions."""
    params = np.asarray(params, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    beta, _, disp = split_params(family, params, p)
    if family in ("gaussian_linear", "linear_residual_ecdf"):
        r = y - X @ beta
        return -0.5 * _LOG_2PI - disp - 0.5 * (r * np.exp(-disp)) ** 2
    if family == "logistic":
        eta = X @ beta
        return y * eta - softplus(eta)
    if family in ("poisson", "negbin"):
        return count_logpmf(family, y, X @ beta, disp)[0]
    if family in ("zip", "zinb"):
        return _zi_parts(family, params, y, X)[0]
    raise ValueError(f"unknown family {family!r}")


def loglik(family: str, params, y, X, weights=None) -> float:
    terms = loglik_terms(family, params, y, X)
    return float(np.dot(_weights(weights, terms.shape[0]), terms))


def score(family: str, params, y, X, weights=None) -> np.ndarray:
    """Analytic gradient of ``loglik`` with respect to the parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    wt = _weights(weights, n)
    beta, _, disp = split_params(family, params, p)
    if family in ("gaussian_linear", "linear_residual_ecdf"):
        r = y - X @ beta
        s2 = np.exp(-2.0 * disp)
        return np.concatenate([X.T @ (wt * r * s2), [np.dot(wt, r * r * s2 - 1.0)]])
    if family == "logistic":
        eta = X @ beta
        return X.T @ (wt * (y - expit(eta)))
    if family in ("poisson", "negbin"):
        _, d_eta, d_tau = count_logpmf(family, y, X @ beta, disp)
        g = X.T @ (wt * d_eta)
        return g if family == "poisson" else np.concatenate([g, [np.dot(wt, d_tau)]])
    if family in ("zip", "zinb"):
        _, w, zeta, d_eta, d_tau = _zi_parts(family, params, y, X)
        g_beta = X.T @ (wt * (1.0 - w) * d_eta)
        g_gamma = X.T @ (wt * (w - expit(zeta)))
        parts = [g_beta, g_gamma]
        if family == "zinb":
            parts.append([np.dot(wt, (1.0 - w) * d_tau)])
        return np.concatenate(parts)
    raise ValueError(f"unknown family {family!r}")


def posterior_zero_weights(family: str, params, y, X) -> np.ndarray:
    """E-step: P(structural zero | y) per row (0 for positive counts)."""
    return _zi_parts(family, params, np.asarray(y, dtype=np.float64), np.asarray(X, dtype=np.float64))[1]
