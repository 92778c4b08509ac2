"""Random forest of CART classification trees (Gini impurity, bootstrap resamples)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .._parallel import ordered_map, thread_count
from ..errors import ValidationError

_LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    max_features: int | None = None  # None -> floor(sqrt(d))
    min_leaf: int = 5
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be at least 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValidationError("max_features must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be non-negative")

    def features_per_split(self, d: int) -> int:
        if self.max_features is None:
            return max(1, int(math.isqrt(d)))
        return min(d, self.max_features)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_features": self.max_features,
            "min_leaf": self.min_leaf,
            "max_depth": self.max_depth,
        }


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``value`` holds the class-1 frequency of the training rows in each node,
    so a leaf's class-frequency pair is ``(1 - value, value)``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == _LEAF

    def leaf_frequencies(self) -> np.ndarray:
        v = self.value[self.is_leaf]
        return np.column_stack([1.0 - v, v])

    @classmethod
    def leaf(cls, p1: float) -> "Tree":
        return cls(
            np.array([_LEAF], np.int32),
            np.array([np.nan]),
            np.array([_LEAF], np.int32),
            np.array([_LEAF], np.int32),
            np.array([float(p1)]),
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    params: ForestParams
    seed: object
    n_features: int
    feature_names: tuple[str, ...] | None = None

    @classmethod
    def from_trees(cls, trees, n_features: int, feature_names=None) -> "Forest":
        trees = tuple(trees)
        return cls(trees, ForestParams(n_trees=len(trees)), None, n_features, feature_names)


# ----------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _randbelow(state, n):
    return np.int64(_splitmix(state) % np.uint64(n))


@numba.njit(cache=True, nogil=True)
def _build_tree(codes, uvals, uoff, y, sample, mtry, min_leaf, max_depth, rng_state):
    n = sample.shape[0]
    d = codes.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.full(cap, np.nan)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)

    max_levels = 0
    for f in range(d):
        max_levels = max(max_levels, uoff[f + 1] - uoff[f])
    cnt = np.zeros(max_levels, np.int64)
    cpos = np.zeros(max_levels, np.int64)
    tmp = np.empty(n, np.int64)
    order = np.arange(d)
    work = sample.copy()

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start
        pos = 0
        for i in range(start, end):
            pos += y[work[i]]
        value[node] = pos / m
        if pos == 0 or pos == m or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        best_imp = np.inf
        best_f = -1
        best_code = -1
        best_thr = 0.0
        visited = 0
        # partial Fisher-Yates: draw features until mtry non-constant ones are seen
        for r in range(d):
            k = r + _randbelow(rng_state, d - r)
            t = order[r]
            order[r] = order[k]
            order[k] = t
            f = order[r]
            base = uoff[f]
            nlev = uoff[f + 1] - base
            if nlev < 2:
                continue
            if nlev <= 4 * m:
                for L in range(nlev):
                    cnt[L] = 0
                    cpos[L] = 0
                for i in range(start, end):
                    row = work[i]
                    c = codes[row, f]
                    cnt[c] += 1
                    cpos[c] += y[row]
                first = -1
                last = -1
                for L in range(nlev):
                    if cnt[L] > 0:
                        if first < 0:
                            first = L
                        last = L
                if first == last:
                    continue
                visited += 1
                nl = 0
                pl = 0
                prev = -1
                for L in range(nlev):
                    if cnt[L] == 0:
                        continue
                    if prev >= 0:
                        nr = m - nl
                        if nl >= min_leaf and nr >= min_leaf:
                            pr = pos - pl
                            imp = (nl - (pl * pl + (nl - pl) * (nl - pl)) / nl) + (
                                nr - (pr * pr + (nr - pr) * (nr - pr)) / nr
                            )
                            if imp < best_imp or (imp == best_imp and f < best_f):
                                best_imp = imp
                                best_f = f
                                best_code = prev
                                lo = uvals[base + prev]
                                hi = uvals[base + L]
                                mid = lo + (hi - lo) / 2.0
                                if not (mid < hi):
                                    mid = lo
                                best_thr = mid
                    nl += cnt[L]
                    pl += cpos[L]
                    prev = L
            else:
                for i in range(start, end):
                    tmp[i - start] = codes[work[i], f]
                idx = np.argsort(tmp[:m])
                c0 = tmp[idx[0]]
                cl = tmp[idx[m - 1]]
                if c0 == cl:
                    continue
                visited += 1
                nl = 0
                pl = 0
                i = 0
                while i < m:
                    c = tmp[idx[i]]
                    j = i
                    while j < m and tmp[idx[j]] == c:
                        pl += y[work[start + idx[j]]]
                        j += 1
                    nl = j
                    if j < m:
                        nr = m - nl
                        if nl >= min_leaf and nr >= min_leaf:
                            pr = pos - pl
                            imp = (nl - (pl * pl + (nl - pl) * (nl - pl)) / nl) + (
                                nr - (pr * pr + (nr - pr) * (nr - pr)) / nr
                            )
                            if imp < best_imp or (imp == best_imp and f < best_f):
                                best_imp = imp
                                best_f = f
                                best_code = c
                                lo = uvals[base + c]
                                hi = uvals[base + tmp[idx[j]]]
                                mid = lo + (hi - lo) / 2.0
                                if not (mid < hi):
                                    mid = lo
                                best_thr = mid
                    i = j
            if visited >= mtry:
                break

        if best_f < 0:
            continue
        # partition work[start:end] so rows going left come first
        i = start
        j = end - 1
        while i <= j:
            if codes[work[i], best_f] <= best_code:
                i += 1
            else:
                t = work[i]
                work[i] = work[j]
                work[j] = t
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered depth-first
        stack_node[top] = rnode
        stack_start[top] = i
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_start[top] = start
        stack_end[top] = i
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _predict(X, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(n_trees):
            node = offsets[t]
            base = offsets[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = base + left[node]
                else:
                    node = base + right[node]
            s += value[node]
        out[i] = s / n_trees
    return out


# ----------------------------------------------------------------------------


def _as_matrix(features):
    if hasattr(features, "numeric_matrix"):
        return features.numeric_matrix(), tuple(features.names)
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X, None


def _as_labels(labels) -> np.ndarray:
    y = np.asarray(getattr(labels, "values", labels))
    if y.ndim != 1:
        raise ValidationError("labels must be one-dimensional")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be binary 0/1")
    return y.astype(np.int64)


def _tree_seed(seed, tree: int) -> tuple[np.ndarray, np.uint64]:
    entropy = list(seed) if isinstance(seed, (list, tuple)) else seed
    ss = np.random.SeedSequence(entropy, spawn_key=(tree,))
    state = ss.generate_state(1, np.uint64)
    return np.random.Generator(np.random.PCG64(ss)), state


def fit_forest(features, labels, params: ForestParams | None = None, seed=0, threads: int | None = None) -> Forest:
    """Grow ``params.n_trees`` trees, each on a bootstrap resample with per-tree seed ``(seed, t)``."""
    params = params or ForestParams()
    X, names = _as_matrix(features)
    y = _as_labels(labels)
    n, d = X.shape
    if y.shape[0] != n:
        raise ValidationError(f"{n} feature rows but {y.shape[0]} labels")
    if n < 2:
        raise ValidationError("a forest needs at least 2 training rows")
    if np.unique(y).size < 2:
        raise ValidationError("labels contain a single class; both classes are required")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")

    codes = np.empty((n, d), np.int64)
    uvals_parts = []
    uoff = np.zeros(d + 1, np.int64)
    for f in range(d):
        u, inv = np.unique(X[:, f], return_inverse=True)
        codes[:, f] = inv
        uvals_parts.append(u)
        uoff[f + 1] = uoff[f] + u.size
    uvals = np.concatenate(uvals_parts)
    mtry = params.features_per_split(d)
    max_depth = -1 if params.max_depth is None else params.max_depth

    def grow(t: int) -> Tree:
        gen, state = _tree_seed(seed, t)
        sample = gen.integers(0, n, size=n)
        arrays = _build_tree(codes, uvals, uoff, y, sample, mtry, params.min_leaf, max_depth, state)
        return Tree(*arrays)

    trees = ordered_map(grow, range(params.n_trees), threads)
    return Forest(tuple(trees), params, seed, d, names)


def _packed(forest: Forest):
    sizes = np.array([t.n_nodes for t in forest.trees], np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = lambda attr: np.concatenate([getattr(t, attr) for t in forest.trees])
    return cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("value"), offsets


def predict_proba(forest: Forest, rows, threads: int | None = None) -> np.ndarray:
    """Mean over trees of the class-1 frequency of the leaf each row lands in."""
    X, names = _as_matrix(rows)
    if X.shape[1] != forest.n_features:
        raise ValidationError(f"rows have {X.shape[1]} features, forest expects {forest.n_features}")
    if names is not None and forest.feature_names is not None and names != forest.feature_names:
        raise ValidationError(
            f"row columns {list(names)} do not match training features {list(forest.feature_names)}"
        )
    packed = _packed(forest)
    n = X.shape[0]
    workers = thread_count(threads)
    if workers <= 1 or n < 2048:
        return _predict(X, *packed)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    parts = ordered_map(lambda s: _predict(X[s[0] : s[1]], *packed), list(zip(bounds[:-1], bounds[1:])), workers)
    return np.concatenate(parts)
