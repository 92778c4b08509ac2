"""Fitted conditional models and their conditional CDFs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr, ndtri

from ..empdist import DiscreteCdfPair, EmpiricalDistribution
from ..errors import DegeneratePairError, ValidationError
from .design import linear_predictor
from .likelihood import count_logpmf

CONTINUOUS_FAMILIES = ("linear_residual_ecdf", "gaussian_linear")
DISCRETE_FAMILIES = ("logistic", "poisson", "negbin", "zip", "zinb")
# count pmf terms are summed until the cumulative mass exceeds this
TRUNCATION_MASS = 1.0 - 1e-12
_GRID_CELLS = 2_000_000


@dataclass(frozen=True, eq=False)
class ConditionalModel:
    family: str
    coefficients: np.ndarray
    design_names: tuple[str, ...]
    loglik: float
    aic: float
    n_obs: int
    sigma: float | None = None
    theta: float | None = None
    zero_coefficients: np.ndarray | None = None
    residual_dist: EmpiricalDistribution | None = None
    residual_quantum: float | None = None
    converged: bool = True
    iterations: int = 0
    gradient_norm: float = 0.0
    trace: tuple[float, ...] = ()
    em_trace: tuple[float, ...] = ()
    # AIC of every candidate tried when the family was chosen automatically
    candidates: dict | None = field(default=None)

    @property
    def is_discrete(self) -> bool:
        return self.family in DISCRETE_FAMILIES

    @property
    def n_coef(self) -> int:
        return self.coefficients.shape[0]

    def params_vector(self) -> np.ndarray:
        """Parameters in the layout used by ``likelihood``."""
        parts = [self.coefficients]
        if self.family in CONTINUOUS_FAMILIES:
            parts.append([np.log(self.sigma)])
        if self.family in ("zip", "zinb"):
            parts.append(self.zero_coefficients)
        if self.family in ("negbin", "zinb"):
            parts.append([np.log(self.theta)])
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])

    def _rows(self, covariates) -> np.ndarray:
        X = np.asarray(covariates, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_coef:
            raise ValidationError(
                f"covariate layout mismatch: expected {self.n_coef} columns {list(self.design_names)}, "
                f"got shape {np.asarray(covariates).shape}"
            )
        return X

    def mean_parameter(self, covariates) -> np.ndarray:
        """Linear predictor (continuous), success probability (logistic) or count mean."""
        eta = linear_predictor(self._rows(covariates), self.coefficients)
        if self.family in CONTINUOUS_FAMILIES:
            return eta
        if self.family == "logistic":
            return expit(eta)
        return np.exp(eta)

    def zero_probability(self, covariates) -> np.ndarray:
        if self.zero_coefficients is None:
            return np.zeros(self._rows(covariates).shape[0])
        return expit(linear_predictor(self._rows(covariates), self.zero_coefficients))

    def snap_residuals(self, r: np.ndarray) -> np.ndarray:
        q = self.residual_quantum
        return np.round(r / q) * q

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "coefficients": self.coefficients.tolist(),
            "design_names": list(self.design_names),
            "loglik": self.loglik,
            "aic": self.aic,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.theta is not None:
            d["theta"] = self.theta
        if self.zero_coefficients is not None:
            d["zero_coefficients"] = self.zero_coefficients.tolist()
        if self.residual_dist is not None:
            d["residual_ecdf"] = self.residual_dist.to_dict()
            d["residual_quantum"] = self.residual_quantum
        if self.candidates is not None:
            d["candidates"] = dict(self.candidates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalModel":
        zc = d.get("zero_coefficients")
        rd = d.get("residual_ecdf")
        return cls(
            family=d["family"],
            coefficients=np.array(d["coefficients"], dtype=np.float64),
            design_names=tuple(d["design_names"]),
            loglik=d["loglik"],
            aic=d["aic"],
            n_obs=d["n_obs"],
            sigma=d.get("sigma"),
            theta=d.get("theta"),
            zero_coefficients=None if zc is None else np.array(zc, dtype=np.float64),
            residual_dist=None if rd is None else EmpiricalDistribution.from_dict(rd),
            residual_quantum=d.get("residual_quantum"),
            converged=d.get("converged", True),
            iterations=d.get("iterations", 0),
            gradient_norm=d.get("gradient_norm", 0.0),
            candidates=d.get("candidates"),
        )


def _count_family(model: ConditionalModel) -> str:
    return "poisson" if model.family in ("poisson", "zip") else "negbin"


def _count_cdf_grid(model: ConditionalModel, eta: np.ndarray, pi: np.ndarray, top: int) -> np.ndarray:
    """Cumulative mass F(k) for k = 0..top, one row per covariate row."""
    k = np.arange(top + 1, dtype=np.float64)
    log_theta = None if model.theta is None else np.log(model.theta)
    logf, _, _ = count_logpmf(_count_family(model), k[None, :], eta[:, None], log_theta)
    pmf = (1.0 - pi)[:, None] * np.exp(logf)
    pmf[:, 0] += pi
    return np.cumsum(pmf, axis=1)


def count_pmf(model: ConditionalModel, x, covariates) -> np.ndarray:
    X = model._rows(covariates)
    x = np.broadcast_to(np.asarray(x, dtype=np.float64), (X.shape[0],))
    eta = linear_predictor(X, model.coefficients)
    pi = model.zero_probability(X)
    log_theta = None if model.theta is None else np.log(model.theta)
    logf, _, _ = count_logpmf(_count_family(model), x, eta, log_theta)
    return (1.0 - pi) * np.exp(logf) + np.where(x == 0, pi, 0.0)


def discrete_cdf_pairs(model: ConditionalModel, x, covariates) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(F(x-), F(x))`` for discrete families; ``x-`` is the previous support point."""
    if not model.is_discrete:
        raise ValueError(f"discrete_cdf_pair is undefined for continuous family {model.family!r}")
    X = model._rows(covariates)
    n = X.shape[0]
    x = np.broadcast_to(np.asarray(x, dtype=np.float64), (n,))
    if model.family == "logistic":
        bad = ~((x == 0) | (x == 1))
        if np.any(bad):
            raise DegeneratePairError(f"value {x[bad][0]!r} is outside the binary support")
        p0 = expit(-linear_predictor(X, model.coefficients))
        return np.where(x == 1, p0, 0.0), np.where(x == 1, 1.0, p0)
    bad = (x < 0) | (x != np.floor(x))
    if np.any(bad):
        raise DegeneratePairError(f"value {x[bad][0]!r} is outside the count support")
    xi = x.astype(np.int64)
    eta = linear_predictor(X, model.coefficients)
    pi = model.zero_probability(X)
    lower = np.empty(n)
    upper = np.empty(n)
    top = int(xi.max(initial=0))
    step = max(1, _GRID_CELLS // (top + 1))
    for a in range(0, n, step):
        sl = slice(a, min(n, a + step))
        F = _count_cdf_grid(model, eta[sl], pi[sl], top)
        rows = np.arange(F.shape[0])
        xs = xi[sl]
        upper[sl] = F[rows, xs]
        lower[sl] = np.where(xs > 0, F[rows, np.maximum(xs - 1, 0)], 0.0)
    return lower, np.minimum(upper, 1.0)


def discrete_cdf_pair(model: ConditionalModel, x, covariates) -> DiscreteCdfPair:
    lower, upper = discrete_cdf_pairs(model, np.array([x], dtype=np.float64), model._rows(covariates)[:1])
    return DiscreteCdfPair(float(lower[0]), float(upper[0]))


def conditional_cdf(model: ConditionalModel, x, covariates):
    """``F(x | covariates)``; scalar in, scalar out, or one value per covariate row."""
    scalar = np.ndim(x) == 0 and np.ndim(covariates) == 1
    X = model._rows(covariates)
    x = np.broadcast_to(np.asarray(x, dtype=np.float64), (X.shape[0],))
    if model.family == "gaussian_linear":
        out = ndtr((x - linear_predictor(X, model.coefficients)) / model.sigma)
    elif model.family == "linear_residual_ecdf":
        r = model.snap_residuals(x - linear_predictor(X, model.coefficients))
        out = model.residual_dist.cdf(r)
    else:
        # F is a step function: evaluate at the largest support point <= x
        xf = np.floor(x)
        out = np.zeros(X.shape[0])
        ok = xf >= 0
        if model.family == "logistic":
            xf = np.minimum(xf, 1.0)
        if np.any(ok):
            out[ok] = discrete_cdf_pairs(model, xf[ok], X[ok])[1]
    out = np.asarray(out, dtype=np.float64)
    return float(out[0]) if scalar else out


def count_truncation_point(model: ConditionalModel, covariates) -> np.ndarray:
    """Smallest k per row with F(k) > 1 - 1e-12; the effective support bound of a count law."""
    X = model._rows(covariates)
    eta = linear_predictor(X, model.coefficients)
    pi = model.zero_probability(X)
    out = np.full(X.shape[0], -1, dtype=np.int64)
    top = 16
    while np.any(out < 0):
        todo = out < 0
        F = _count_cdf_grid(model, eta[todo], pi[todo], top)
        hit = F > TRUNCATION_MASS
        found = hit.any(axis=1)
        idx = np.flatnonzero(todo)
        out[idx[found]] = hit[found].argmax(axis=1)
        if top > 10**7:
            raise FloatingPointError("count distribution too heavy-tailed to truncate")
        top *= 4
    return out


def conditional_quantile(model: ConditionalModel, u, covariates) -> np.ndarray:
    """Generalized inverse of the conditional CDF, one value per row (counts are truncated)."""
    X = model._rows(covariates)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (X.shape[0],))
    eta = linear_predictor(X, model.coefficients)
    if model.family == "gaussian_linear":
        return eta + model.sigma * ndtri(u)
    if model.family == "linear_residual_ecdf":
        return eta + model.residual_dist.quantile(u)
    if model.family == "logistic":
        return (u > 1.0 - expit(eta)).astype(np.float64)
    pi = model.zero_probability(X)
    top = int(count_truncation_point(model, X).max())
    F = _count_cdf_grid(model, eta, pi, top)
    k = (F < u[:, None]).sum(axis=1)
    return np.minimum(k, top).astype(np.float64)
