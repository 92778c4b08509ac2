"""Typed columnar tables, CSV ingestion and chain-plan validation."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

KINDS = ("continuous", "binary", "count", "categorical")
ROLES = ("protected", "adjust", "outcome", "drop")
PRE_TRANSFORMS = ("none", "log")
MODELS = (
    "auto",
    "linear_residual_ecdf",
    "gaussian_linear",
    "logistic",
    "poisson",
    "negbin",
    "zip",
    "zinb",
)
COUNT_MODELS = ("poisson", "negbin", "zip", "zinb")

# which explicit model families may be requested for which column kind
_MODELS_FOR_KIND = {
    "continuous": ("linear_residual_ecdf", "gaussian_linear"),
    "binary": ("logistic",),
    "count": COUNT_MODELS,
}
_AUTO_MODEL = {"continuous": "linear_residual_ecdf", "binary": "logistic", "count": "auto"}

DEFAULT_M = 10
MAX_SEED = 2**64


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Column:
    """One typed column.

    ``levels`` holds the sorted level set for categorical columns and the
    (label for 0, label for 1) pair for binary columns read from text labels.
    """

    name: str
    kind: str
    values: np.ndarray
    levels: tuple[str, ...] | None = None
    pre_transform: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"column {self.name!r}: unknown kind {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ValidationError(f"column {self.name!r}: values must be one-dimensional")
        if self.kind == "continuous":
            values = values.astype(np.float64)
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"column {self.name!r}: non-finite continuous value")
        elif self.kind in ("binary", "count"):
            if values.size and not np.all(np.equal(np.mod(values, 1), 0)):
                raise ValidationError(f"column {self.name!r}: non-integer {self.kind} value")
            values = values.astype(np.int64)
            if self.kind == "binary" and not np.all((values == 0) | (values == 1)):
                raise ValidationError(f"column {self.name!r}: binary values must be 0 or 1")
            if self.kind == "count" and np.any(values < 0):
                raise ValidationError(f"column {self.name!r}: negative count")
        else:
            values = values.astype(str)
            levels = tuple(sorted(set(values.tolist()))) if self.levels is None else tuple(self.levels)
            if not set(values.tolist()) <= set(levels):
                raise ValidationError(f"column {self.name!r}: value outside recorded levels")
            object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Column):
            return NotImplemented
        return (
            self.name == other.name
            and self.kind == other.kind
            and self.levels == other.levels
            and self.pre_transform == other.pre_transform
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )

    def with_values(self, values) -> "Column":
        return replace(self, values=values)

    def export_strings(self) -> list[str]:
        """Text cells on the original file scale (inverse pre-transform applied)."""
        if self.kind == "continuous":
            v = np.exp(self.values) if self.pre_transform == "log" else self.values
            return [repr(float(x)) for x in v]
        if self.kind == "binary" and self.levels is not None:
            return [self.levels[int(x)] for x in self.values]
        if self.kind == "categorical":
            return self.values.tolist()
        return [str(int(x)) for x in self.values]


@dataclass(frozen=True, eq=False)
class Table:
    columns: tuple[Column, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate column names in {names}")
        if len({len(c) for c in cols}) > 1:
            raise ValidationError("columns have unequal lengths")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def __contains__(self, name):
        return name in self.names

    def __getitem__(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, Table):
            return NotImplemented
        return self.columns == other.columns

    def select(self, names: Iterable[str]) -> "Table":
        return Table(tuple(self[n] for n in names))

    def drop(self, names: Iterable[str]) -> "Table":
        names = set(names)
        return Table(tuple(c for c in self.columns if c.name not in names))

    def replace_column(self, column: Column) -> "Table":
        if column.name not in self:
            raise KeyError(column.name)
        return Table(tuple(column if c.name == column.name else c for c in self.columns))

    def take(self, rows) -> "Table":
        rows = np.asarray(rows)
        return Table(tuple(c.with_values(c.values[rows]) for c in self.columns))

    def numeric_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Float matrix of non-categorical columns, one column per name."""
        names = self.names if names is None else names
        cols = []
        for n in names:
            c = self[n]
            if c.kind == "categorical":
                raise ValidationError(f"column {n!r} is categorical; no numeric encoding")
            cols.append(c.values.astype(np.float64))
        return np.column_stack(cols) if cols else np.empty((self.n_rows, 0))

    def to_csv(self, path) -> None:
        """Write UTF-8 CSV atomically; output depends only on the table contents."""
        cells = [c.export_strings() for c in self.columns]
        lines = [",".join(self.names)]
        lines.extend(",".join(row) for row in zip(*cells))
        write_text_atomic(path, "\n".join(lines) + "\n")


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    kind: str
    pre_transform: str = "none"
    model: str = "auto"
    # optional text labels for a binary column: (label read as 0, label read as 1)
    levels: tuple[str, str] | None = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError(f"variable name must be a non-empty string, got {self.name!r}")
        if self.role not in ROLES:
            raise ValidationError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise ValidationError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.pre_transform not in PRE_TRANSFORMS:
            raise ValidationError(
                f"variable {self.name!r}: unknown pre_transform {self.pre_transform!r}"
            )
        if self.pre_transform == "log" and self.kind != "continuous":
            raise ValidationError(
                f"variable {self.name!r}: log pre_transform requires a continuous column"
            )
        if self.model not in MODELS:
            raise ValidationError(f"variable {self.name!r}: unknown model {self.model!r}")
        if self.levels is not None:
            if self.kind != "binary" or len(self.levels) != 2 or self.levels[0] == self.levels[1]:
                raise ValidationError(
                    f"variable {self.name!r}: levels must be two distinct labels of a binary column"
                )
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSpec":
        unknown = set(d) - {"name", "role", "kind", "pre_transform", "model", "levels"}
        if unknown:
            raise ValidationError(f"variable {d.get('name')!r}: unknown keys {sorted(unknown)}")
        try:
            return cls(
                name=d["name"],
                role=d["role"],
                kind=d["kind"],
                pre_transform=d.get("pre_transform") or "none",
                model=d.get("model") or "auto",
                levels=tuple(d["levels"]) if d.get("levels") is not None else None,
            )
        except KeyError as e:
            raise ValidationError(f"variable spec missing key {e.args[0]!r}: {d}") from None

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "role": self.role,
            "kind": self.kind,
            "pre_transform": self.pre_transform,
            "model": self.model,
        }
        if self.levels is not None:
            d["levels"] = list(self.levels)
        return d


@dataclass(frozen=True)
class SpecFile:
    variables: tuple[VariableSpec, ...]
    order: tuple[str, ...] | None = None
    m: int = DEFAULT_M
    seed: int = 0


def read_spec_file(path) -> SpecFile:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"spec file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("variables"), list):
        raise ValidationError(f"spec file {path} must be an object with a 'variables' list")
    variables = tuple(VariableSpec.from_dict(v) for v in doc["variables"])
    order = doc.get("order")
    return SpecFile(
        variables=variables,
        order=tuple(order) if order is not None else None,
        m=doc.get("m", DEFAULT_M),
        seed=doc.get("seed", 0),
    )


def _parse_cell(text: str, spec: VariableSpec, row: int):
    where = f"row {row}, column {spec.name!r}"
    s = text.strip()
    if s == "":
        raise ValidationError(f"missing value at {where}")
    if spec.kind == "continuous":
        try:
            v = float(s)
        except ValueError:
            raise ValidationError(f"cannot parse {s!r} as continuous at {where}") from None
        if not math.isfinite(v):
            raise ValidationError(f"non-finite value {s!r} at {where}")
        if spec.pre_transform == "log":
            if v <= 0:
                raise ValidationError(f"non-positive value {s!r} under log transform at {where}")
            v = math.log(v)
        return v
    if spec.kind == "binary":
        if spec.levels is not None:
            if s not in spec.levels:
                raise ValidationError(
                    f"value {s!r} is not one of the binary labels {list(spec.levels)} at {where}"
                )
            return spec.levels.index(s)
        if s not in ("0", "1"):
            raise ValidationError(f"binary value must be 0 or 1, got {s!r} at {where}")
        return int(s)
    if spec.kind == "count":
        try:
            v = int(s)
        except ValueError:
            raise ValidationError(f"cannot parse {s!r} as a count at {where}") from None
        if v < 0:
            raise ValidationError(f"negative count {s!r} at {where}")
        return v
    return s


def load_csv(path, specs: Sequence[VariableSpec]) -> Table:
    """Read a CSV into a typed Table.

    Every spec'd column must be present in the header; header columns not
    named in ``specs`` are ignored, as are ``drop``-role columns. When the
    header repeats a name, the first occurrence is used. Rows are numbered
    from 1 for the first data row in error messages.
    """
    try:
        fh = open(path, encoding="utf-8-sig", newline="")
    except FileNotFoundError:
        raise ValidationError(f"data file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"data file {path} is empty") from None
        position: dict[str, int] = {}
        for i, h in enumerate(header):
            position.setdefault(h.strip(), i)
        kept = [s for s in specs if s.role != "drop"]
        for s in specs:
            if s.name not in position:
                raise ValidationError(f"missing column {s.name!r} in {path}")
        cells: list[list] = [[] for _ in kept]
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"row {row_no} has {len(row)} fields, header has {len(header)}"
                )
            for k, s in enumerate(kept):
                cells[k].append(_parse_cell(row[position[s.name]], s, row_no))
    if not cells or not cells[0]:
        raise ValidationError(f"data file {path} has no data rows")
    columns = []
    for s, vals in zip(kept, cells):
        if s.kind == "categorical":
            arr = np.array(vals, dtype=str)
        elif s.kind == "continuous":
            arr = np.array(vals, dtype=np.float64)
        else:
            arr = np.array(vals, dtype=np.int64)
        columns.append(Column(s.name, s.kind, arr, levels=s.levels, pre_transform=s.pre_transform))
    return Table(tuple(columns))


@dataclass(frozen=True)
class ChainPlan:
    protected: tuple[str, ...]
    order: tuple[str, ...]
    model_per_variable: dict = field(hash=False)
    outcome: str
    m_replicates: int = DEFAULT_M
    seed: int = 0
    kinds: dict = field(default_factory=dict, hash=False)

    def check_table(self, table: Table) -> None:
        for name in (*self.protected, *self.order):
            if name not in table:
                raise ValidationError(f"table is missing plan column {name!r}")
            if self.kinds and table[name].kind != self.kinds[name]:
                raise ValidationError(
                    f"column {name!r} has kind {table[name].kind!r}, plan expects {self.kinds[name]!r}"
                )

    def to_dict(self) -> dict:
        return {
            "protected": list(self.protected),
            "order": list(self.order),
            "model_per_variable": dict(self.model_per_variable),
            "outcome": self.outcome,
            "m_replicates": self.m_replicates,
            "seed": self.seed,
            "kinds": dict(self.kinds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainPlan":
        return cls(
            protected=tuple(d["protected"]),
            order=tuple(d["order"]),
            model_per_variable=dict(d["model_per_variable"]),
            outcome=d["outcome"],
            m_replicates=int(d["m_replicates"]),
            seed=int(d["seed"]),
            kinds=dict(d.get("kinds", {})),
        )


def validate_plan(
    specs: Sequence[VariableSpec],
    order: Sequence[str] | None = None,
    m: int = DEFAULT_M,
    seed: int = 0,
) -> ChainPlan:
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValidationError(f"duplicate variable names: {dupes}")
    outcomes = [s for s in specs if s.role == "outcome"]
    if len(outcomes) != 1:
        raise ValidationError(f"exactly one outcome variable required, found {len(outcomes)}")
    protected = [s for s in specs if s.role == "protected"]
    adjust = [s for s in specs if s.role == "adjust"]
    if not protected:
        raise ValidationError("at least one protected variable required")
    if not adjust:
        raise ValidationError("at least one adjust variable required")
    if isinstance(m, bool) or not isinstance(m, int) or m < 1:
        raise ValidationError(f"m must be a positive integer, got {m!r}")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < MAX_SEED:
        raise ValidationError(f"seed must be an integer in [0, 2**64), got {seed!r}")

    by_name = {s.name: s for s in specs}
    if order is None:
        order = [s.name for s in adjust]
    order = list(order)
    seen = set()
    for n in order:
        if n in seen:
            raise ValidationError(f"duplicate name {n!r} in order")
        seen.add(n)
        if n not in by_name:
            raise ValidationError(f"order names unknown variable {n!r}")
        role = by_name[n].role
        if role != "adjust":
            raise ValidationError(f"{role} variable {n!r} cannot appear in order")
    missing = [s.name for s in adjust if s.name not in seen]
    if missing:
        raise ValidationError(f"order is not a permutation of the adjust variables; missing {missing}")

    models = {}
    for n in order:
        s = by_name[n]
        if s.kind == "categorical":
            raise ValidationError(f"adjust variable {n!r}: categorical columns cannot be adjusted")
        if s.model == "auto":
            models[n] = _AUTO_MODEL[s.kind]
        elif s.model in _MODELS_FOR_KIND[s.kind]:
            models[n] = s.model
        else:
            raise ValidationError(f"variable {n!r}: model {s.model!r} does not fit kind {s.kind!r}")

    kinds = {s.name: s.kind for s in specs if s.role != "drop"}
    return ChainPlan(
        protected=tuple(s.name for s in protected),
        order=tuple(order),
        model_per_variable=models,
        outcome=outcomes[0].name,
        m_replicates=m,
        seed=seed,
        kinds=kinds,
    )
