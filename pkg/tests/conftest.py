import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fairchain.tabular import Column, Table

ROOT = Path(__file__).resolve().parents[1]
COMPAS_ENV = "FAIRCHAIN_COMPAS_CSV"
COMPAS_SPEC = ROOT / "configs" / "compas_spec.json"

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def compas_csv() -> Path | None:
    p = Path(os.environ.get(COMPAS_ENV, ROOT / "data" / "compas-scores-two-years.csv"))
    return p if p.is_file() else None


@pytest.fixture
def compas_path():
    p = compas_csv()
    if p is None:
        pytest.skip(f"COMPAS CSV not found; set {COMPAS_ENV}")
    return p


def make_table(**cols) -> Table:
    """Table from ``name=(kind, values)`` or ``name=(kind, values, levels)``."""
    out = []
    for name, spec in cols.items():
        kind, values, *rest = spec
        levels = rest[0] if rest else None
        if kind == "categorical":
            values = np.asarray(values, dtype=str)
            levels = tuple(sorted(set(values.tolist())))
        elif kind == "continuous":
            values = np.asarray(values, dtype=np.float64)
        else:
            values = np.asarray(values, dtype=np.int64)
        out.append(Column(name, kind, values, levels=levels))
    return Table(tuple(out))
