"""Kolmogorov-Smirnov fit and parity tests, and a protected-attribute leakage audit."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError

DISCRETE_CAVEAT = "ties present: asymptotic p-value is conservative for discrete data"


@dataclass(frozen=True)
class KsReport:
    statistic: float
    n: int
    p_value: float
    variant: str  # "uniform" or "two_sample"
    n2: int | None = None
    caveat: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def kolmogorov_sf(t: float) -> float:
    """P(K > t) for the Kolmogorov distribution."""
    if t < 0.04:
        # 1 - P(K > t) is below 1e-300 here
        return 1.0
    if t < 1.0:
        # Jacobi theta form converges fast for small t
        s = 0.0
        for k in range(1, 101):
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * t * t))
            s += term
            if term < 1e-17 * s:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2.0 * math.pi) / t * s))
    s = 0.0
    sign = 1.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * t * t)
        s += sign * term
        sign = -sign
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * s))


def ks_p_value(d: float, n_eff: float) -> float:
    """Asymptotic p-value with the finite-n correction (sqrt(n) + 0.12 + 0.11/sqrt(n)) * D."""
    en = math.sqrt(n_eff)
    return kolmogorov_sf((en + 0.12 + 0.11 / en) * d)


def ks_uniform(u) -> KsReport:
    u = np.sort(np.asarray(u, dtype=np.float64).ravel())
    n = u.size
    if n == 0:
        raise ValidationError("ks_uniform needs at least one value")
    if np.any(~((u >= 0) & (u <= 1))):
        raise ValidationError("ks_uniform values must lie in [0, 1]")
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))
    return KsReport(d, n, ks_p_value(d, n), "uniform")


def ks_two_sample(a, b) -> KsReport:
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ValidationError("ks_two_sample needs two non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / na
    fb = np.searchsorted(b, grid, side="right") / nb
    d = float(np.max(np.abs(fa - fb)))
    ties = np.unique(grid).size < grid.size
    return KsReport(
        d,
        na,
        ks_p_value(d, na * nb / (na + nb)),
        "two_sample",
        n2=nb,
        caveat=DISCRETE_CAVEAT if ties else None,
    )


def stratified_folds(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per row; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    out = np.empty(labels.shape[0], dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        out[idx] = np.arange(idx.size) % folds
    return out


def leakage_audit(features, protected, folds: int = 5, seed: int = 0, n_trees: int = 100, threads=None) -> dict:
    """Cross-validated AUC of a random forest predicting each protected level (one-vs-rest).

    ``protected`` is a categorical or binary Column (or a plain label array).
    An AUC near 0.5 means the features carry no recoverable information about
    that level.
    """
    from .evaluate import ForestParams, fit_forest, predict_proba, roc_and_auc

    if folds < 2:
        raise ValidationError("leakage audit needs at least 2 folds")
    labels = np.asarray(getattr(protected, "values", protected))
    if getattr(protected, "kind", None) == "binary" and getattr(protected, "levels", None):
        labels = np.asarray(protected.levels)[labels]
    labels = labels.astype(str)
    X = features.numeric_matrix() if hasattr(features, "numeric_matrix") else np.asarray(features, float)
    if X.ndim == 1:
        X = X[:, None]
    params = ForestParams(n_trees=n_trees)
    levels = sorted(set(labels.tolist()))
    if len(levels) < 2:
        raise ValidationError("protected column has a single level")
    out = {}
    for k, level in enumerate(levels):
        if len(levels) == 2 and k == 1:
            # the complementary one-vs-rest problem has the same AUC
            out[level] = out[levels[0]]
            break
        target = (labels == level).astype(np.int64)
        fold_of = stratified_folds(target, folds, np.random.default_rng([seed, k]))
        scores = np.empty(target.shape[0])
        for f in range(folds):
            test = fold_of == f
            train = ~test
            for part, name in ((target[test], "test"), (target[train], "training")):
                if np.unique(part).size < 2:
                    raise ValidationError(
                        f"leakage audit: {name} fold {f} for level {level!r} contains a single class"
                    )
            forest = fit_forest(X[train], target[train], params, seed=[seed, k, f], threads=threads)
            scores[test] = predict_proba(forest, X[test])
        out[level] = roc_and_auc(scores, target).auc
    return out
