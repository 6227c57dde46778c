import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hcdefect.config import ConfigError, ExperimentConfig, load_config, validate_config
from hcdefect.io import dumps, fmt, read_csv, write_csv, write_field


def test_defaults():
    cfg = validate_config({})
    assert cfg == ExperimentConfig()
    assert cfg.lattice_consistent and cfg.cell_h == 0.25
    assert "a2" in cfg.defaults_applied
    assert len(cfg.hash()) == 16


@pytest.mark.parametrize("raw,field", [
    ({"eps_list": [0.3]}, "eps_list"),
    ({"boundary_policy": "scaled", "theta": 3.0}, "theta"),
    ({"a2": -1.0}, "a2"),
    ({"a2": None}, "a2"),
    ({"m": 2}, "m"),
    ({"h_cell": 0.3}, "h_cell"),
    ({"J": 1.5}, "J"),
    ({"L_fine": 4.1}, "L_fine"),
    ({"boundary_policy": "partial"}, "boundary_policy"),
])
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as ei:
        validate_config(raw)
    assert any(e.startswith(field) for e in ei.value.errors)


def test_all_errors_reported_together():
    with pytest.raises(ConfigError) as ei:
        validate_config({"a0": -1.0, "a1": 0.0})
    assert len(ei.value.errors) == 2


def test_unknown_keys():
    with pytest.raises(ConfigError):
        validate_config({"foo": 1})
    assert validate_config({"foo": 1}, strict=False) == ExperimentConfig()


def test_load_with_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"a2": 2.0, "eps_list": [0.5]}))
    cfg = load_config(p, ["a2=3", "boundary_policy=removed", "eps_list=[0.25, 0.125]"])
    assert cfg.a2 == 3.0 and cfg.boundary_policy == "removed"
    assert cfg.eps_list == (0.25, 0.125)
    with pytest.raises(ConfigError):
        load_config(p, ["novalue"])
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_hash_depends_on_values_only():
    a = validate_config({"a2": 1.0})
    b = validate_config({})
    assert a.hash() == b.hash()
    assert validate_config({"a2": 2.0}).hash() != b.hash()
    assert a.hash(["a0", "m"]) == validate_config({"a2": 5.0}).hash(["a0", "m"])


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(fmt(x)) == x


def test_fmt_special_values():
    assert fmt(float("nan")) == "nan" and fmt(-math.inf) == "-inf"
    assert fmt(3) == "3" and fmt(True) == "1"
    assert fmt(0.1) == "0.10000000000000001"


def test_csv_and_field(tmp_path):
    p = write_csv(tmp_path / "a.csv", ("x", "y"), [(1.0, 2.5), (np.float64(1 / 3), 4)])
    header, rows = read_csv(p)
    assert header == ["x", "y"] and rows[1][0] == 1 / 3
    f = write_field(tmp_path / "f.csv", np.array([[0.0, 1.0]]), np.array([2.0 + 0j]))
    assert f.read_text().splitlines() == ["x,y,value", "0,1,2"]


def test_json_is_valid_and_sorted():
    s = dumps({"b": np.array([1.0, np.nan]), "a": np.float64(2.0), "c": np.array(3.0)})
    obj = json.loads(s)
    assert list(obj) == ["a", "b", "c"]
    assert obj["b"] == [1.0, "nan"] and obj["c"] == 3.0
