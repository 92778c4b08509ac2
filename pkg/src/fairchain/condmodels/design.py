"""Design matrices: intercept, dummy-coded protected levels, previously adjusted columns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import RankDeficientError, ValidationError
from ..tabular import Column


@dataclass(frozen=True)
class Term:
    source: str
    level: str | None = None  # dummy indicator for this level of a categorical source

    @property
    def label(self) -> str:
        return self.source if self.level is None else f"{self.source}[{self.level}]"


@dataclass(frozen=True)
class DesignLayout:
    """Recipe turning named columns into design rows; stored so new records encode identically."""

    terms: tuple[Term, ...]
    levels: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        return ("(intercept)",) + tuple(t.label for t in self.terms)

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.source for t in self.terms))

    @classmethod
    def for_columns(cls, columns: Sequence[Column]) -> "DesignLayout":
        terms: list[Term] = []
        levels = []
        for c in columns:
            if c.kind == "categorical":
                # reference level = first in sorted order
                lv = tuple(sorted(c.levels))
                levels.append((c.name, lv))
                terms.extend(Term(c.name, level) for level in lv[1:])
            else:
                terms.append(Term(c.name))
        return cls(tuple(terms), tuple(levels))

    def encode(self, columns: Mapping[str, np.ndarray]) -> "DesignMatrix":
        known = dict(self.levels)
        n = None
        for src in self.sources:
            if src not in columns:
                raise ValidationError(f"design column {src!r} missing")
            v = np.asarray(columns[src])
            if n is None:
                n = v.shape[0]
            elif v.shape[0] != n:
                raise ValidationError("design columns have unequal lengths")
            if src in known:
                unseen = sorted(set(v.astype(str).tolist()) - set(known[src]))
                if unseen:
                    raise ValidationError(f"unseen level {unseen[0]!r} in column {src!r}")
        if n is None:
            n = _row_count(columns)
        mat = np.empty((n, 1 + len(self.terms)), dtype=np.float64)
        mat[:, 0] = 1.0
        for k, t in enumerate(self.terms, start=1):
            v = np.asarray(columns[t.source])
            if t.level is None:
                mat[:, k] = v.astype(np.float64)
            else:
                mat[:, k] = (v.astype(str) == t.level).astype(np.float64)
        return DesignMatrix(mat, self.names)

    def to_dict(self) -> dict:
        return {
            "terms": [[t.source, t.level] for t in self.terms],
            "levels": {name: list(lv) for name, lv in self.levels},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignLayout":
        return cls(
            tuple(Term(s, lv) for s, lv in d["terms"]),
            tuple((name, tuple(lv)) for name, lv in d["levels"].items()),
        )


def _row_count(columns: Mapping[str, np.ndarray]) -> int:
    for v in columns.values():
        return np.asarray(v).shape[0]
    raise ValidationError("cannot infer row count of an empty design")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    matrix: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != len(self.names):
            raise ValidationError("design matrix shape does not match its column names")
        if not np.all(m[:, 0] == 1.0):
            raise ValidationError("first design column must be the intercept")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def check_rank(self) -> None:
        rank = np.linalg.matrix_rank(self.matrix)
        if rank < self.matrix.shape[1]:
            raise RankDeficientError(
                f"design with columns {list(self.names)} has rank {rank} < {self.matrix.shape[1]}"
            )


def intercept_only(n: int) -> DesignMatrix:
    return DesignMatrix(np.ones((n, 1)), ("(intercept)",))


def linear_predictor(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Row-wise ``X @ beta`` whose per-row rounding does not depend on how many rows are passed."""
    return (np.asarray(X, dtype=np.float64) * beta).sum(axis=1)
