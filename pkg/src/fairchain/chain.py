"""Chained conditional-CDF adjustment.

Variables are processed in plan order. Variable ``j`` is regressed on the
protected columns and the already-adjusted columns ``1..j-1``; every value
is pushed through its fitted conditional CDF (randomised for discrete
variables) and then through the empirical quantile function of the original
column. The adjusted columns are independent of the protected ones when the
conditional models are right, and each keeps its original marginal.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .condmodels import (
    ConditionalModel,
    DesignLayout,
    conditional_cdf,
    discrete_cdf_pairs,
    fit,
    select_count_model,
)
from .empdist import EmpiricalDistribution, ecdf, quantile, randomized_pit_many
from .errors import FairchainError, ValidationError
from .tabular import ChainPlan, Column, Table

CHAIN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ReplicateStream:
    """Random source for one replicate.

    Variable ``j`` gets its own generator keyed by ``(seed, replicate, j)``;
    row ``i`` consumes the ``i``-th draw, so results do not depend on how
    work is scheduled.
    """

    seed: int
    replicate: int

    def generator(self, variable_index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.replicate, variable_index))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    pre_transform: str = "none"
    levels: tuple[str, ...] | None = None

    @classmethod
    def of(cls, c: Column) -> "ColumnSchema":
        return cls(c.name, c.kind, c.pre_transform, c.levels)


@dataclass(frozen=True, eq=False)
class VariableStep:
    name: str
    model: ConditionalModel
    marginal: EmpiricalDistribution
    layout: DesignLayout


@dataclass(frozen=True, eq=False)
class FittedChain:
    plan: ChainPlan
    steps: tuple[VariableStep, ...]
    schema: tuple[ColumnSchema, ...]
    replicate_index: int
    pit_values: dict = field(default_factory=dict)

    def step(self, name: str) -> VariableStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self, include_pit: bool = True) -> dict:
        d = {
            "format_version": CHAIN_FORMAT_VERSION,
            "replicate_index": self.replicate_index,
            "plan": self.plan.to_dict(),
            "schema": [
                {
                    "name": s.name,
                    "kind": s.kind,
                    "pre_transform": s.pre_transform,
                    "levels": None if s.levels is None else list(s.levels),
                }
                for s in self.schema
            ],
            "variables": [
                {
                    "name": s.name,
                    "model": s.model.to_dict(),
                    "marginal": s.marginal.to_dict(),
                    "layout": s.layout.to_dict(),
                }
                for s in self.steps
            ],
        }
        if include_pit:
            d["pit_values"] = {k: v.tolist() for k, v in self.pit_values.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedChain":
        if d.get("format_version") != CHAIN_FORMAT_VERSION:
            raise ValidationError(f"unsupported chain format {d.get('format_version')!r}")
        schema = tuple(
            ColumnSchema(
                s["name"], s["kind"], s["pre_transform"], None if s["levels"] is None else tuple(s["levels"])
            )
            for s in d["schema"]
        )
        steps = tuple(
            VariableStep(
                v["name"],
                ConditionalModel.from_dict(v["model"]),
                EmpiricalDistribution.from_dict(v["marginal"]),
                DesignLayout.from_dict(v["layout"]),
            )
            for v in d["variables"]
        )
        pit = {k: np.array(v, dtype=np.float64) for k, v in d.get("pit_values", {}).items()}
        return cls(ChainPlan.from_dict(d["plan"]), steps, schema, int(d["replicate_index"]), pit)


@dataclass(frozen=True, eq=False)
class AdjustedDataset:
    replicate_index: int
    table: Table

    def to_csv(self, path) -> None:
        self.table.to_csv(path)


class FitCache:
    """Memo of fitted models keyed by (variable, family, response, design) contents.

    Replicates share every fit whose inputs are bit-identical, e.g. the first
    variable in the chain; fitting is deterministic so sharing cannot change
    results.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._models: dict[str, ConditionalModel] = {}

    @staticmethod
    def key(name, family, y, X) -> str:
        h = hashlib.sha256()
        h.update(f"{name}\0{family}\0{X.shape}".encode())
        h.update(np.ascontiguousarray(y, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(X).tobytes())
        return h.hexdigest()

    def get(self, key):
        with self._lock:
            return self._models.get(key)

    def put(self, key, model):
        with self._lock:
            self._models.setdefault(key, model)


def _fit_variable(name, family, y, design, cache: FitCache | None) -> ConditionalModel:
    key = None
    if cache is not None:
        key = FitCache.key(name, family, y, design.matrix)
        hit = cache.get(key)
        if hit is not None:
            return hit
    if family == "auto":
        model = select_count_model(y, design)
    else:
        model = fit(family, y, design)
    if cache is not None:
        cache.put(key, model)
    return model


def _pit(model: ConditionalModel, x: np.ndarray, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if model.is_discrete:
        lower, upper = discrete_cdf_pairs(model, x, X)
        return randomized_pit_many(lower, upper, rng)
    return conditional_cdf(model, x, X)


def _as_kind(values: np.ndarray, kind: str) -> np.ndarray:
    return values.astype(np.int64) if kind in ("binary", "count") else values.astype(np.float64)


def _adjusted_table(source: Table, plan: ChainPlan, adjusted: dict) -> Table:
    keep = set(plan.order) | {plan.outcome}
    cols = []
    for c in source.columns:
        if c.name in adjusted:
            cols.append(c.with_values(adjusted[c.name]))
        elif c.name in keep:
            cols.append(c)
    return Table(tuple(cols))


def fit_and_transform(
    table: Table,
    plan: ChainPlan,
    replicate_rng: ReplicateStream,
    cache: FitCache | None = None,
) -> tuple[FittedChain, AdjustedDataset]:
    plan.check_table(table)
    design_columns = {z: table[z].values for z in plan.protected}
    layout_columns = [table[z] for z in plan.protected]
    adjusted: dict[str, np.ndarray] = {}
    steps = []
    pit_values = {}
    for j, name in enumerate(plan.order):
        layout = DesignLayout.for_columns(layout_columns)
        design = layout.encode(design_columns)
        source = table[name]
        x = source.values.astype(np.float64)
        try:
            model = _fit_variable(name, plan.model_per_variable[name], x, design, cache)
        except FairchainError as e:
            raise type(e)(f"variable {name!r}: {e}") from e
        u = _pit(model, x, design.matrix, replicate_rng.generator(j))
        marginal = ecdf(x)
        x_adj = _as_kind(quantile(marginal, u), source.kind)
        adjusted[name] = x_adj
        pit_values[name] = u
        steps.append(VariableStep(name, model, marginal, layout))
        design_columns[name] = x_adj
        layout_columns.append(source.with_values(x_adj))
    chain = FittedChain(
        plan=plan,
        steps=tuple(steps),
        schema=tuple(ColumnSchema.of(table[n]) for n in (*plan.protected, *plan.order)),
        replicate_index=replicate_rng.replicate,
        pit_values=pit_values,
    )
    return chain, AdjustedDataset(replicate_rng.replicate, _adjusted_table(table, plan, adjusted))


def fit_replicates(
    table: Table, plan: ChainPlan, threads: int | None = None
) -> list[tuple[FittedChain, AdjustedDataset]]:
    """Run the chain once per replicate ``k = 1..M`` with stream ``(seed, k)``."""
    plan.check_table(table)
    cache = FitCache()
    return ordered_map(
        lambda k: fit_and_transform(table, plan, ReplicateStream(plan.seed, k), cache),
        range(1, plan.m_replicates + 1),
        threads,
    )


def adjust_many(table: Table, plan: ChainPlan, threads: int | None = None) -> list[AdjustedDataset]:
    return [adj for _, adj in fit_replicates(table, plan, threads)]


def transform_new(chain: FittedChain, rows: Table, rng: ReplicateStream) -> AdjustedDataset:
    """Apply a frozen chain to new records without refitting."""
    plan = chain.plan
    for s in chain.schema:
        if s.name not in rows:
            raise ValidationError(f"rows are missing column {s.name!r}")
        if rows[s.name].kind != s.kind:
            raise ValidationError(
                f"column {s.name!r} has kind {rows[s.name].kind!r}, chain expects {s.kind!r}"
            )
    design_columns = {z: rows[z].values for z in plan.protected}
    adjusted = {}
    for j, step in enumerate(chain.steps):
        design = step.layout.encode(design_columns)
        x = rows[step.name].values.astype(np.float64)
        u = _pit(step.model, x, design.matrix, rng.generator(j))
        x_adj = _as_kind(quantile(step.marginal, u), rows[step.name].kind)
        adjusted[step.name] = x_adj
        design_columns[step.name] = x_adj
    return AdjustedDataset(rng.replicate, _adjusted_table(rows, plan, adjusted))
