# Copyright (c) 2025, paneitz-lab developers.

import io
import json
import math
import os
from unittest.mock import patch

import pandas as pd
import pytest
from click.testing import CliRunner

import dask

from paneitz_lab import __version__
from paneitz_lab.cli import lab


def invoke(*args):
    return CliRunner().invoke(lab, [str(a) for a in args])


def reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def document(result):
    assert result.exit_code == 0, result.output
    return json.loads(result.stdout, parse_constant=reject_constant)


def test_version():
    result = invoke("--version")
    assert result.exit_code == 0
    assert __version__ in result.output


def test_capacity_document():
    doc = document(invoke("capacity", "--r", 0.1, "--R", 1, "--P1", 1, "--reproducible"))
    assert doc["command"] == "capacity"
    assert doc["version"] == __version__
    assert "timestamp" not in doc
    assert doc["parameters"]["r"] == 0.1
    assert doc["result"]["A"] == pytest.approx(-0.7562, abs=1e-4)


def test_contract_violation_exits_with_code_2():
    result = invoke("capacity", "--r", 1, "--R", 1)
    assert result.exit_code == 2
    assert "0 < r < R" in result.output


def test_bubble_mass():
    result = invoke("bubble", "--lambda", 0.25, "--L", "inf", "--reproducible")
    doc = document(result)
    assert doc["result"]["L"] == "inf"
    assert "Infinity" not in result.stdout
    assert doc["result"]["mass"] == pytest.approx(8 * math.pi**2 / 3, rel=1e-8)
    assert "energy" not in doc["result"]


def test_bubble_lambda_from_qp():
    doc = document(invoke("bubble", "--qp", 3, "--L", 10, "--reproducible"))
    assert doc["parameters"]["lam"] == pytest.approx(0.25)
    assert doc["result"]["q_mass"] < 8 * math.pi**2


def test_reproducible_runs_are_identical():
    args = ("bubble", "--lambda", 1, "--L", 10, "--reproducible")
    first, second = invoke(*args), invoke(*args)
    assert first.exit_code == second.exit_code == 0
    assert first.stdout == second.stdout

    stamped = document(invoke("bubble", "--lambda", 1, "--L", 10))
    assert "timestamp" in stamped


def test_paneitz_csv():
    result = invoke("paneitz", "--kind", "sphere", "--resolution", 8, "--format", "csv")
    assert result.exit_code == 0, result.output
    lines = result.stdout.splitlines()
    assert lines[0] == "mode,mu"
    assert lines[1:4] == ["0,0", "1,24", "2,120"]


def test_moments():
    doc = document(invoke("moments", "--index", "0,0", "--index", "0,0,1,1", "--reproducible"))
    values = [row["value"] for row in doc["result"]]
    assert values == pytest.approx([0.25, 1 / 24])


def test_criterion():
    doc = document(invoke("criterion", "--qp", 3, "--R-scalar", 6, "--reproducible"))
    assert doc["result"]["value"] == pytest.approx(-1.0)
    assert doc["result"]["satisfied"] is False


def test_sweep(tmp_path):
    config = tmp_path / "bubble.cfg"
    config.write_text(
        "# bubble masses on two cut-offs\n"
        "command = bubble\n"
        "lambda = 0.25, 1.0\n"
        "L = 10, inf\n"
    )
    result = invoke("sweep", config, "--format", "csv")
    assert result.exit_code == 0, result.output
    table = pd.read_csv(io.StringIO(result.stdout))
    assert len(table) == 4
    assert table["lam"].tolist() == [0.25, 0.25, 1.0, 1.0]
    assert table["mass"].iloc[1] == pytest.approx(8 * math.pi**2 / 3, rel=1e-8)


def test_sweep_rejects_unknown_keys(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("command = bubble\ncolour = 1\n")
    result = invoke("sweep", config)
    assert result.exit_code == 2
    assert "unknown keys" in result.output


def test_sweep_needs_a_command(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("lambda = 1\n")
    result = invoke("sweep", config)
    assert result.exit_code == 2
    assert "command" in result.output


def test_non_converged_minimize_exits_with_code_1(tmp_path):
    output = tmp_path / "minimize.json"
    result = invoke(
        "minimize",
        "--resolution",
        8,
        "--eps",
        1,
        "--seed",
        1,
        "--max-iter",
        2,
        "--output",
        output,
        "--reproducible",
    )
    assert result.exit_code == 1
    doc = json.loads(output.read_text())
    assert doc["result"]["converged"] is False
    assert doc["parameters"]["max_iter"] == 2


def test_output_directory_from_config(tmp_path):
    with patch.dict(
        os.environ, {"DASK_PANEITZ_LAB__OUTPUT_DIRECTORY": str(tmp_path)}
    ):
        dask.config.refresh()
        results = [
            invoke("bubble", "--lambda", 1, "--L", 10, "--output", "bubble.json")
            for _ in range(2)
        ]
    dask.config.refresh()

    assert all(r.exit_code == 0 for r in results)

    written = sorted(p.name for p in tmp_path.iterdir())
    assert len(written) == 2
    assert "bubble.json" in written
    assert all(name.startswith("bubble") and name.endswith(".json") for name in written)
