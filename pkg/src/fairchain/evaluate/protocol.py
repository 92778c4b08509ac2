"""Out-of-fold evaluation of raw versus adjusted features."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import ks_two_sample, stratified_folds
from ..errors import ValidationError
from .forest import ForestParams, fit_forest, predict_proba
from .roc import RocCurve, roc_and_auc

REPLICATE_STRATEGY = "one forest per replicate, probabilities averaged"


def average_over_replicates(per_replicate_scores) -> np.ndarray:
    arrays = [np.asarray(s, dtype=np.float64) for s in per_replicate_scores]
    if not arrays:
        raise ValidationError("need at least one replicate")
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ValidationError(f"replicate score lengths differ: {[a.shape[0] for a in arrays]}")
    return np.mean(np.stack(arrays), axis=0)


def out_of_fold_scores(X, y, fold_of, params: ForestParams, seed, threads=None) -> np.ndarray:
    """Each row is scored by a forest trained on the other folds."""
    scores = np.empty(y.shape[0])
    for f in np.unique(fold_of):
        test = fold_of == f
        forest = fit_forest(X[~test], y[~test], params, seed=[*seed, int(f)], threads=threads)
        scores[test] = predict_proba(forest, X[test], threads=threads)
    return scores


def group_parity(scores, groups) -> list[dict]:
    """Two-sample KS between the score distributions of every pair of groups."""
    groups = np.asarray(groups)
    out = []
    for a, b in itertools.combinations(sorted(set(groups.tolist())), 2):
        r = ks_two_sample(scores[groups == a], scores[groups == b])
        out.append({"group_a": a, "group_b": b, **r.to_dict()})
    return out


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    labels: np.ndarray
    scores_unadjusted: np.ndarray
    scores_adjusted: np.ndarray
    roc_unadjusted: RocCurve
    roc_adjusted: RocCurve
    params: ForestParams
    folds: int
    n_replicates: int
    groups: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def parity(self) -> dict:
        if self.groups is None:
            return {}
        return {
            "unadjusted": group_parity(self.scores_unadjusted, self.groups),
            "adjusted": group_parity(self.scores_adjusted, self.groups),
        }

    def to_dict(self) -> dict:
        return {
            "auc_unadjusted": self.roc_unadjusted.auc,
            "auc_adjusted": self.roc_adjusted.auc,
            "n_rows": int(self.labels.shape[0]),
            "n_replicates": self.n_replicates,
            "folds": self.folds,
            "forest": self.params.to_dict(),
            "replicate_strategy": REPLICATE_STRATEGY,
            "score_parity": self.parity(),
            **self.extra,
        }

    def scores_by_group_csv(self) -> str:
        groups = self.groups if self.groups is not None else np.full(self.labels.shape[0], "all")
        lines = ["data,group,score"]
        for name, s in (("unadjusted", self.scores_unadjusted), ("adjusted", self.scores_adjusted)):
            lines.extend(f"{name},{g},{float(v)!r}" for g, v in zip(groups, s))
        return "\n".join(lines) + "\n"


def evaluate_replicates(
    raw,
    adjusted,
    features,
    outcome: str,
    groups=None,
    params: ForestParams | None = None,
    folds: int = 5,
    seed: int = 0,
    threads: int | None = None,
) -> EvaluationResult:
    """Compare a forest on raw ``features`` with forests on each adjusted table.

    Scores are out-of-fold over ``folds`` outcome-stratified folds shared by
    all runs. The adjusted score of a row is the mean over replicates.
    """
    params = params or ForestParams()
    if folds < 2:
        raise ValidationError("evaluation needs at least 2 folds")
    features = list(features)
    adjusted = list(adjusted)
    if not adjusted:
        raise ValidationError("no adjusted replicates supplied")
    y = np.asarray(raw[outcome].values).astype(np.int64)
    if np.unique(y).size < 2:
        raise ValidationError(f"outcome {outcome!r} has a single class")
    fold_of = stratified_folds(y, folds, np.random.default_rng([seed, 0xF01D]))
    for f in range(folds):
        if np.unique(y[fold_of == f]).size < 2:
            raise ValidationError(f"fold {f} contains a single outcome class; use fewer folds")

    X_raw = raw.select(features).numeric_matrix()
    s_raw = out_of_fold_scores(X_raw, y, fold_of, params, (seed, 0), threads)
    per_rep = []
    for k, table in enumerate(adjusted, start=1):
        if table.n_rows != raw.n_rows:
            raise ValidationError(f"adjusted replicate {k} has {table.n_rows} rows, raw data has {raw.n_rows}")
        X_adj = table.select(features).numeric_matrix()
        per_rep.append(out_of_fold_scores(X_adj, y, fold_of, params, (seed, k), threads))
    s_adj = average_over_replicates(per_rep)
    return EvaluationResult(
        labels=y,
        scores_unadjusted=s_raw,
        scores_adjusted=s_adj,
        roc_unadjusted=roc_and_auc(s_raw, y),
        roc_adjusted=roc_and_auc(s_adj, y),
        params=params,
        folds=folds,
        n_replicates=len(adjusted),
        groups=None if groups is None else np.asarray(groups).astype(str),
    )
