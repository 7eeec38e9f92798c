# Copyright (c) 2025, paneitz-lab developers.

import io
import json
import math
import os
import time
from unittest.mock import patch

import click
import numpy as np
import pandas as pd
import pytest

import dask

from paneitz_lab.blowup import CriterionResult
from paneitz_lab.utils import (
    CommaSeparatedFloats,
    expand_grid,
    flatten,
    get_config,
    ordered_map,
    parse_scalar,
    parse_sweep_config,
    render,
    resolve_output_path,
    save_output,
    to_jsonable,
)


def test_get_config():
    assert get_config("minimize.tol") == 1e-8
    assert get_config("minimize.max-iter") == 20000
    assert get_config("minimize.tol", 1e-4) == 1e-4


def test_get_config_from_environment():
    with patch.dict(os.environ, {"DASK_PANEITZ_LAB__MINIMIZE__TOL": "1e-6"}):
        dask.config.refresh()
        assert get_config("minimize.tol") == 1e-6
    dask.config.refresh()
    assert get_config("minimize.tol") == 1e-8


@pytest.mark.parametrize("scheduler", ["threads", "sync"])
def test_ordered_map_keeps_input_order(scheduler):
    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert ordered_map(slow_square, range(6), scheduler=scheduler) == [0, 1, 4, 9, 16, 25]
    assert ordered_map(slow_square, []) == []


def test_comma_separated_floats():
    param = CommaSeparatedFloats(sizes=(4,))
    np.testing.assert_array_equal(param.convert("0.1,0,0,2", None, None), [0.1, 0, 0, 2])
    with pytest.raises(click.BadParameter, match="expected 4"):
        param.convert("1,2", None, None)
    with pytest.raises(click.BadParameter, match="invalid float list"):
        CommaSeparatedFloats().convert("1,x", None, None)


@pytest.mark.parametrize(
    "text,expected", [("3", 3), (" 1e-3 ", 1e-3), ("inf", math.inf), ("sphere", "sphere")]
)
def test_parse_scalar(text, expected):
    value = parse_scalar(text)
    assert value == expected
    assert type(value) is type(expected)


def test_parse_sweep_config(tmp_path):
    path = tmp_path / "sweep.cfg"
    path.write_text(
        "# capacity sweep\n"
        "\n"
        "command = capacity\n"
        "r = 0.1, 0.2  # inner radii\n"
        "R = 1\n"
        "P1 = 1, 2, 3\n"
    )
    grid = parse_sweep_config(path)
    assert list(grid) == ["command", "r", "R", "P1"]
    assert grid["command"] == ["capacity"]
    assert grid["r"] == [0.1, 0.2]
    assert grid["P1"] == [1, 2, 3]

    combos = expand_grid({k: v for k, v in grid.items() if k != "command"})
    assert len(combos) == 6
    assert combos[0] == {"r": 0.1, "R": 1, "P1": 1}
    assert combos[-1] == {"r": 0.2, "R": 1, "P1": 3}


@pytest.mark.parametrize(
    "text,match",
    [
        ("r = 1\nr = 2\n", "duplicate key"),
        ("r =\n", "has no values"),
        ("r 1\n", "expected 'key = value'"),
    ],
)
def test_parse_sweep_config_rejects(tmp_path, text, match):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ValueError, match=match):
        parse_sweep_config(path)


def test_to_jsonable_and_flatten():
    doc = to_jsonable(
        {
            "criterion": CriterionResult(np.float64(-1.0), np.bool_(False)),
            "a": np.arange(3),
            "n": np.int64(4),
        }
    )
    assert doc == {"criterion": {"value": -1.0, "satisfied": False}, "a": [0, 1, 2], "n": 4}
    assert type(doc["n"]) is int
    assert flatten(doc) == {
        "criterion.value": -1.0,
        "criterion.satisfied": False,
        "a[0]": 0,
        "a[1]": 1,
        "a[2]": 2,
        "n": 4,
    }


def reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def test_render():
    document = {"result": {"x": 0.1, "L": math.inf}, "command": "bubble"}
    assert json.loads(render(document), parse_constant=reject_constant) == {
        "command": "bubble",
        "result": {"x": 0.1, "L": "inf"},
    }

    table = pd.DataFrame({"x": [0.1, 1 / 3]})
    text = render(document, table, "csv")
    assert text.splitlines()[0] == "x"
    parsed = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    assert parsed["x"].tolist() == [0.1, 1 / 3]

    single = pd.read_csv(io.StringIO(render(document, fmt="csv")))
    assert sorted(single.columns) == ["command", "result.L", "result.x"]

    with pytest.raises(ValueError, match="unknown output format"):
        render(document, fmt="yaml")


def test_save_output_never_overwrites(tmp_path):
    path = tmp_path / "out" / "result.json"
    first = save_output("one\n", str(path))
    second = save_output("two\n", str(path))
    assert first == str(path)
    assert second != first
    assert os.path.basename(second).startswith("result-")
    assert second.endswith(".0.json")
    assert path.read_text() == "one\n"
    with open(second) as f:
        assert f.read() == "two\n"


def test_save_output_to_stdout(capsys):
    assert save_output("text\n", "-") is None
    assert capsys.readouterr().out == "text\n"


def test_resolve_output_path(tmp_path):
    assert resolve_output_path(None) is None
    assert resolve_output_path("-") is None
    assert resolve_output_path("a.json") == "a.json"
    with dask.config.set({"paneitz-lab.output-directory": str(tmp_path)}):
        assert resolve_output_path("a.json") == os.path.join(str(tmp_path), "a.json")
        assert resolve_output_path("/abs/a.json") == "/abs/a.json"


def test_render_spells_non_finite_values():
    document = {
        "values": [math.inf, -math.inf, math.nan, 1.5],
        "gap": np.float64(np.inf),
        "table": pd.DataFrame({"L": [10.0, math.inf]}),
    }
    text = render(document)
    for constant in ("Infinity", "NaN"):
        assert constant not in text
    doc = json.loads(text, parse_constant=reject_constant)
    assert doc["values"] == ["inf", "-inf", "nan", 1.5]
    assert doc["gap"] == "inf"
    assert doc["table"] == [{"L": 10.0}, {"L": "inf"}]
    assert math.isinf(parse_scalar(doc["table"][1]["L"]))

    table = pd.read_csv(io.StringIO(render({"L": math.inf}, fmt="csv")))
    assert math.isinf(table["L"].iloc[0])
