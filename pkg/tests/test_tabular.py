import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairchain.errors import ValidationError
from fairchain.tabular import Column, VariableSpec, load_csv, read_spec_file, validate_plan


def V(name, role, kind, **kw):
    return VariableSpec(name, role, kind, **kw)


BASIC = [
    V("race", "protected", "categorical"),
    V("sex", "adjust", "binary"),
    V("age", "adjust", "continuous", pre_transform="log"),
    V("y", "outcome", "binary"),
]


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_log_pre_transform_applied_at_ingest(tmp_path):
    p = write(tmp_path, "race,sex,age,y\nA,0,20,1\nB,1,30,0\nA,1,45,0\n")
    t = load_csv(p, BASIC)
    assert t.n_rows == 3
    np.testing.assert_array_equal(t["age"].values, [math.log(20), math.log(30), math.log(45)])
    assert t["race"].levels == ("A", "B")


def test_binary_domain_violation_names_row_and_column(tmp_path):
    p = write(tmp_path, "race,sex,age,y\nA,0,20,1\nB,2,30,0\n")
    with pytest.raises(ValidationError, match=r"row 2.*'sex'"):
        load_csv(p, BASIC)


def test_missing_column(tmp_path):
    p = write(tmp_path, "race,sex,y\nA,0,1\n")
    with pytest.raises(ValidationError, match="'age'"):
        load_csv(p, BASIC)


def test_missing_value_rejected(tmp_path):
    p = write(tmp_path, "race,sex,age,y\nA,,20,1\n")
    with pytest.raises(ValidationError, match="missing value at row 1"):
        load_csv(p, BASIC)


def test_non_positive_under_log(tmp_path):
    p = write(tmp_path, "race,sex,age,y\nA,0,0,1\n")
    with pytest.raises(ValidationError, match="non-positive"):
        load_csv(p, BASIC)


def test_unparseable_count(tmp_path):
    specs = [V("z", "protected", "binary"), V("c", "adjust", "count"), V("y", "outcome", "binary")]
    p = write(tmp_path, "z,c,y\n0,1,1\n1,1.5,0\n")
    with pytest.raises(ValidationError, match=r"row 2, column 'c'"):
        load_csv(p, specs)


def test_drop_columns_removed_and_extra_columns_ignored(tmp_path):
    specs = BASIC + [V("junk", "drop", "continuous")]
    p = write(tmp_path, "race,extra,sex,age,y,junk\nA,x,0,20,1,3.5\nB,y,1,30,0,1\n")
    t = load_csv(p, specs)
    assert t.names == ("race", "sex", "age", "y")


def test_binary_labels(tmp_path):
    specs = [V("z", "protected", "binary"), V("sex", "adjust", "binary", levels=("Female", "Male")),
             V("y", "outcome", "binary")]
    p = write(tmp_path, "z,sex,y\n0,Male,1\n1,Female,0\n")
    t = load_csv(p, specs)
    np.testing.assert_array_equal(t["sex"].values, [1, 0])
    assert t["sex"].export_strings() == ["Male", "Female"]


def test_csv_round_trip_is_deterministic(tmp_path):
    p = write(tmp_path, "race,sex,age,y\nA,0,20,1\nB,1,30.5,0\n")
    t = load_csv(p, BASIC)
    t.to_csv(tmp_path / "a.csv")
    t.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    again = load_csv(tmp_path / "a.csv", BASIC)
    np.testing.assert_allclose(again["age"].values, t["age"].values, rtol=0, atol=1e-14)


def test_column_kind_constraints():
    with pytest.raises(ValidationError):
        Column("b", "binary", np.array([0, 2]))
    with pytest.raises(ValidationError):
        Column("c", "count", np.array([-1, 2]))
    with pytest.raises(ValidationError):
        Column("c", "count", np.array([0.5]))
    with pytest.raises(ValidationError):
        Column("x", "continuous", np.array([np.nan]))


def test_plan_declaration_order_default():
    plan = validate_plan(BASIC)
    assert plan.order == ("sex", "age")
    assert plan.model_per_variable == {"sex": "logistic", "age": "linear_residual_ecdf"}


def test_plan_duplicate_in_order():
    with pytest.raises(ValidationError, match="duplicate"):
        validate_plan(BASIC, order=["age", "sex", "age"])


def test_plan_rejects_outcome_in_order():
    with pytest.raises(ValidationError):
        validate_plan(BASIC, order=["sex", "age", "y"])


def test_plan_requires_permutation():
    with pytest.raises(ValidationError, match="permutation"):
        validate_plan(BASIC, order=["sex"])


def test_plan_requires_roles():
    with pytest.raises(ValidationError, match="outcome"):
        validate_plan(BASIC[:3])
    with pytest.raises(ValidationError, match="protected"):
        validate_plan(BASIC[1:])
    with pytest.raises(ValidationError, match="adjust"):
        validate_plan([BASIC[0], BASIC[3]])


def test_plan_count_model_deferred_and_checked():
    specs = [V("z", "protected", "binary"), V("c", "adjust", "count"), V("y", "outcome", "binary")]
    assert validate_plan(specs).model_per_variable["c"] == "auto"
    bad = [specs[0], V("c", "adjust", "count", model="logistic"), specs[2]]
    with pytest.raises(ValidationError, match="does not fit"):
        validate_plan(bad)


def test_plan_m_and_seed_validated():
    with pytest.raises(ValidationError):
        validate_plan(BASIC, m=0)
    with pytest.raises(ValidationError):
        validate_plan(BASIC, seed=-1)
    with pytest.raises(ValidationError):
        validate_plan(BASIC, seed=2**64)


def test_log_only_on_continuous():
    with pytest.raises(ValidationError):
        V("c", "adjust", "count", pre_transform="log")


@given(st.permutations(["sex", "age"]))
def test_plan_order_fixed_point(order):
    plan = validate_plan(BASIC, order=order)
    assert validate_plan(BASIC, order=plan.order).order == plan.order
    assert validate_plan(BASIC).order == validate_plan(BASIC, order=validate_plan(BASIC).order).order


def test_compas_spec_parses():
    from conftest import COMPAS_SPEC

    sf = read_spec_file(COMPAS_SPEC)
    plan = validate_plan(sf.variables, sf.order, sf.m, sf.seed)
    assert plan.protected == ("race",)
    assert len(plan.order) == 6


def test_compas_rows(compas_path):
    from conftest import COMPAS_SPEC

    sf = read_spec_file(COMPAS_SPEC)
    t = load_csv(compas_path, sf.variables)
    with open(compas_path, encoding="utf-8") as fh:
        n_lines = sum(1 for line in fh if line.strip()) - 1
    assert t.n_rows == n_lines
