import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from viroctl.export import csv_text, format_number, to_jsonable, write_csv, write_json


@pytest.mark.parametrize("x,s", [(0.0, "0"), (-0.0, "0"), (1.5, "1.5"), (1e-20, "1e-20"),
                                 (1 / 3, "0.333333333333"), (float("nan"), "nan"),
                                 (float("-inf"), "-inf")])
def test_format_number(x, s):
    assert format_number(x) == s


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_number_round_trips_to_12_digits(x):
    y = float(format_number(x))
    assert math.isclose(x, y, rel_tol=1e-11, abs_tol=0.0) or x == y


def test_csv_text_layout():
    assert csv_text(["a", "b"], [[1, 2.5], [0, -1]]) == "a,b\n1,2.5\n0,-1\n"


def test_write_csv_shape_checked(tmp_path):
    with pytest.raises(ValueError):
        write_csv(tmp_path / "x.csv", ["a", "b"], np.zeros((2, 3)))
    assert not (tmp_path / "x.csv").exists()


def test_atomic_write_leaves_no_temp(tmp_path):
    write_json(tmp_path / "d" / "out.json", {"b": 1, "a": [1.0, float("nan")], "c": 1 + 2j})
    assert [p.name for p in (tmp_path / "d").iterdir()] == ["out.json"]
    data = json.loads((tmp_path / "d" / "out.json").read_text())
    assert data == {"a": [1.0, None], "b": 1, "c": [1.0, 2.0]}
    assert list(data) == ["a", "b", "c"]


def test_to_jsonable_numpy():
    out = to_jsonable({"x": np.array([1.0, np.inf]), "n": np.int64(3), "f": np.bool_(True)})
    assert out == {"x": [1.0, None], "n": 3, "f": True}
    with pytest.raises(TypeError):
        to_jsonable(object())
