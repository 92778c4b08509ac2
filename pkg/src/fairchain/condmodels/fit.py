"""Maximum-likelihood fitting of the conditional families."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from ..empdist import ecdf
from ..errors import ConvergenceError, FitError, SeparationError, ValidationError
from .design import DesignMatrix, linear_predictor
from .likelihood import loglik, n_params, negbin_hessian, posterior_zero_weights, score
from .model import CONTINUOUS_FAMILIES, ConditionalModel
from .optim import GTOL, MAX_ITER, RTOL, NewtonResult, fd_hessian, newton_ascent

COUNT_FAMILIES = ("poisson", "negbin", "zip", "zinb")
# |linear predictor| beyond this with every such row classified correctly means separation
_SEPARATION_ETA = 15.0
# residuals are compared on a dyadic grid this many bits below the response magnitude
_RESIDUAL_BITS = 40
# Newton steps per EM M-step
_M_STEPS = 2
EM_RTOL = RTOL


def _check_response(family: str, y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise ValidationError("response contains non-finite values")
    if family == "logistic" and not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic response must be 0/1")
    if family in COUNT_FAMILIES and not np.all((y >= 0) & (y == np.floor(y))):
        raise ValidationError(f"{family} response must be non-negative integers")


def _aic(ll: float, k: int) -> float:
    return -2.0 * ll + 2.0 * k


# -- single-family optimizers; weights support the EM M-steps ----------------


def logistic_newton(y, X, weights=None, start=None, max_iter=MAX_ITER) -> NewtonResult:
    """IRLS (Newton) for logistic regression; ``y`` may be fractional."""
    wt = np.ones(len(y)) if weights is None else weights
    if start is None:
        start = np.zeros(X.shape[1])
        start[0] = logit(np.clip(np.average(y, weights=wt), 1e-6, 1 - 1e-6))

    def hess(b):
        p = expit(X @ b)
        return -(X.T * (wt * p * (1.0 - p))) @ X

    return newton_ascent(
        lambda b: loglik("logistic", b, y, X, wt),
        lambda b: score("logistic", b, y, X, wt),
        start,
        hess=hess,
        max_iter=max_iter,
    )


def poisson_newton(y, X, weights=None, start=None, max_iter=MAX_ITER) -> NewtonResult:
    wt = np.ones(len(y)) if weights is None else weights
    if start is None:
        start = np.zeros(X.shape[1])
        start[0] = np.log(max(np.average(y, weights=wt), 1e-8))

    def hess(b):
        mu = np.exp(X @ b)
        return -(X.T * (wt * mu)) @ X

    return newton_ascent(
        lambda b: loglik("poisson", b, y, X, wt),
        lambda b: score("poisson", b, y, X, wt),
        start,
        hess=hess,
        max_iter=max_iter,
    )


def negbin_profile(y, X, weights=None, start=None, max_iter=MAX_ITER) -> NewtonResult:
    """Alternate Fisher scoring on beta (theta fixed) with 1-d Newton on log theta."""
    wt = np.ones(len(y)) if weights is None else weights
    p = X.shape[1]
    if start is None:
        b = poisson_newton(y, X, wt).x
        mu = np.exp(X @ b)
        excess = np.dot(wt, (y - mu) ** 2 - mu) / np.dot(wt, mu**2)
        theta = 1.0 / excess if excess > 0 else 100.0
        start = np.concatenate([b, [np.log(np.clip(theta, 1e-3, 1e6))]])
    params = np.array(start, dtype=np.float64)

    def f(t):
        return loglik("negbin", t, y, X, wt)

    def g(t):
        return score("negbin", t, y, X, wt)

    ll = f(params)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        tau = params[p]
        theta = np.exp(tau)

        def hess_b(b):
            mu = np.exp(X @ b)
            return -(X.T * (wt * mu * theta / (theta + mu))) @ X

        b = newton_ascent(
            lambda b: f(np.append(b, tau)), lambda b: g(np.append(b, tau))[:p], params[:p], hess=hess_b
        ).x
        t = newton_ascent(lambda s: f(np.append(b, s)), lambda s: g(np.append(b, s))[p:], [tau]).x
        params = np.append(b, t)
        ll_new = f(params)
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll = ll_new
        trace.append(ll)
        if np.max(np.abs(g(params))) < GTOL or rel < RTOL:
            converged = True
            break
    res = newton_ascent(f, g, params, max_iter=max_iter)
    res.trace = trace + res.trace[1:]
    res.iterations += it
    res.converged = res.converged and converged
    return res


def _zero_inflated_start(family: str, y, p: int) -> np.ndarray:
    p0 = np.mean(y == 0)
    pos = y[y > 0]
    m = pos.mean()
    if family == "zip":
        # mean of a zero-truncated Poisson(lam) is lam / (1 - exp(-lam))
        if m > 1.0 + 1e-9:
            lam = brentq(lambda lam: lam / -np.expm1(-lam) - m, 1e-10, m)
        else:
            lam = 1e-2
        mu, f0, extra = lam, np.exp(-lam), []
    else:
        v = pos.var()
        theta = m * m / (v - m) if v > m else 100.0
        theta = float(np.clip(theta, 1e-2, 1e4))
        mu = m
        f0 = (theta / (theta + mu)) ** theta
        extra = [np.log(theta)]
    pi = np.clip(1.0 - (1.0 - p0) / (1.0 - f0), 0.01, 0.99)
    beta = np.zeros(p)
    beta[0] = np.log(mu)
    gamma = np.zeros(p)
    gamma[0] = logit(pi)
    return np.concatenate([beta, gamma, extra])


def zero_inflated_em(family: str, y, X, max_iter=MAX_ITER) -> tuple[NewtonResult, list]:
    """Generalised EM over the latent structural-zero indicator, then Newton on the observed likelihood.

    Each M-step takes up to ``_M_STEPS`` damped Newton steps on the expected
    complete-data log-likelihood of each component; every accepted step
    increases it, which is enough for the observed-data log-likelihood to be
    non-decreasing. Returns the final optimizer result and the observed
    log-likelihood before EM and after every EM iteration.
    """
    if not np.any(y == 0):
        raise FitError(f"{family}: response has no zeros")
    if not np.any(y > 0):
        raise FitError(f"{family}: response has no positive counts")
    p = X.shape[1]
    params = _zero_inflated_start(family, y, p)
    ll = loglik(family, params, y, X)
    em_trace = [ll]
    for _ in range(max_iter):
        w = posterior_zero_weights(family, params, y, X)
        gamma = logistic_newton(w, X, start=params[p : 2 * p], max_iter=_M_STEPS).x
        if family == "zip":
            count = poisson_newton(y, X, weights=1.0 - w, start=params[:p], max_iter=_M_STEPS).x
            params = np.concatenate([count, gamma])
        else:
            wc = 1.0 - w
            count = newton_ascent(
                lambda t: loglik("negbin", t, y, X, wc),
                lambda t: score("negbin", t, y, X, wc),
                np.append(params[:p], params[2 * p]),
                hess=lambda t: negbin_hessian(t, y, X, wc),
                max_iter=_M_STEPS,
            ).x
            params = np.concatenate([count[:p], gamma, count[p:]])
        ll_new = loglik(family, params, y, X)
        em_trace.append(ll_new)
        rel = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll = ll_new
        if rel < EM_RTOL:
            break
    res = newton_ascent(
        lambda t: loglik(family, t, y, X), lambda t: score(family, t, y, X), params
    )
    return res, em_trace


def _check_separation(y, X, beta) -> None:
    eta = linear_predictor(X, beta)
    extreme = np.abs(eta) > _SEPARATION_ETA
    if np.any(extreme) and np.all((eta[extreme] > 0) == (y[extreme] == 1)):
        kind = "complete" if np.all(extreme) else "quasi-complete"
        raise SeparationError(
            f"{kind} separation in logistic fit: {int(extreme.sum())} rows perfectly predicted"
        )


# -- public entry points ------------------------------------------------------


def fit(family: str, response, design: DesignMatrix) -> ConditionalModel:
    y = np.asarray(response, dtype=np.float64)
    X = design.matrix
    if y.ndim != 1 or y.shape[0] != design.n_rows:
        raise ValidationError(
            f"response length {y.shape[0] if y.ndim else 0} does not match design rows {design.n_rows}"
        )
    _check_response(family, y)
    design.check_rank()
    n, p = X.shape
    k = n_params(family, p)
    common = dict(design_names=design.names, n_obs=n)

    if family in CONTINUOUS_FAMILIES:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        r = y - linear_predictor(X, beta)
        sigma = float(np.sqrt(np.mean(r * r)))
        if not sigma > 0:
            raise FitError("response is an exact linear function of the design")
        params = np.append(beta, np.log(sigma))
        ll = loglik(family, params, y, X)
        extra = {}
        if family == "linear_residual_ecdf":
            scale = max(float(np.max(np.abs(y))), float(np.max(np.abs(r))))
            quantum = 2.0 ** (np.ceil(np.log2(scale)) - _RESIDUAL_BITS)
            extra = dict(residual_quantum=quantum)
            snapped = np.round(r / quantum) * quantum
            extra["residual_dist"] = ecdf(snapped)
        return ConditionalModel(
            family=family,
            coefficients=beta,
            loglik=ll,
            aic=_aic(ll, k),
            sigma=sigma,
            gradient_norm=float(np.max(np.abs(score(family, params, y, X)))),
            **extra,
            **common,
        )

    em_trace: list = []
    if family == "logistic":
        res = logistic_newton(y, X)
        _check_separation(y, X, res.x)
    elif family == "poisson":
        res = poisson_newton(y, X)
    elif family == "negbin":
        res = negbin_profile(y, X)
    elif family in ("zip", "zinb"):
        res, em_trace = zero_inflated_em(family, y, X)
    else:
        raise ValidationError(f"unknown family {family!r}")
    if not res.converged or not np.all(np.isfinite(res.x)):
        raise ConvergenceError(
            f"{family} fit did not converge in {res.iterations} iterations "
            f"(gradient sup-norm {res.grad_norm:.3g})"
        )
    beta = res.x[:p]
    model = ConditionalModel(
        family=family,
        coefficients=beta,
        loglik=res.loglik,
        aic=_aic(res.loglik, k),
        theta=float(np.exp(res.x[-1])) if family in ("negbin", "zinb") else None,
        zero_coefficients=res.x[p : 2 * p].copy() if family in ("zip", "zinb") else None,
        converged=True,
        iterations=res.iterations,
        gradient_norm=res.grad_norm,
        trace=tuple(res.trace),
        em_trace=tuple(em_trace),
        **common,
    )
    return model


def select_count_model(response, design: DesignMatrix) -> ConditionalModel:
    """Fit every count family and keep the one with the smallest AIC (ties: earlier family)."""
    fitted = {}
    failures = {}
    for family in COUNT_FAMILIES:
        try:
            fitted[family] = fit(family, response, design)
        except ValidationError:
            raise
        except (FitError, FloatingPointError, np.linalg.LinAlgError) as e:
            failures[family] = str(e)
    if not fitted:
        raise FitError(f"all candidate count models failed: {failures}")
    best = min(fitted, key=lambda f: (fitted[f].aic, COUNT_FAMILIES.index(f)))
    candidates = {f: (fitted[f].aic if f in fitted else None) for f in COUNT_FAMILIES}
    return dataclasses.replace(fitted[best], candidates=candidates)


def observed_information(model: ConditionalModel, response, design: DesignMatrix) -> np.ndarray:
    """Negative Hessian of the log-likelihood at the fitted parameters."""
    y = np.asarray(response, dtype=np.float64)
    X = design.matrix
    return -fd_hessian(lambda t: score(model.family, t, y, X), model.params_vector())


def standard_errors(model: ConditionalModel, response, design: DesignMatrix) -> np.ndarray:
    """Asymptotic standard errors of the full parameter vector (log scale for dispersions)."""
    cov = np.linalg.inv(observed_information(model, response, design))
    return np.sqrt(np.diag(cov))
